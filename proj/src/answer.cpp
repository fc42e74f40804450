#include "kpsel/answer.hpp"

#include <cctype>
#include <limits>
#include <numeric>

namespace kpsel {

namespace {

constexpr std::string_view kBoxed = "\\boxed{";

// Index one past the brace closing the group opened just before `start`.
std::optional<std::size_t> close_brace(std::string_view text, std::size_t start) {
  int depth = 1;
  for (std::size_t i = start; i < text.size(); ++i) {
    if (text[i] == '{') ++depth;
    if (text[i] == '}' && --depth == 0) return i;
  }
  return std::nullopt;
}

bool mul_overflows(std::int64_t a, std::int64_t b, std::int64_t* out) {
  return __builtin_mul_overflow(a, b, out);
}

std::optional<std::int64_t> parse_digits(std::string_view digits) {
  if (digits.empty()) return std::nullopt;
  std::int64_t value = 0;
  for (char c : digits) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
    if (mul_overflows(value, 10, &value) || __builtin_add_overflow(value, c - '0', &value)) {
      return std::nullopt;
    }
  }
  return value;
}

std::optional<Rational> make(std::int64_t num, std::int64_t den) {
  if (den == 0) return std::nullopt;
  if (den < 0) {
    if (num == std::numeric_limits<std::int64_t>::min() ||
        den == std::numeric_limits<std::int64_t>::min()) {
      return std::nullopt;
    }
    num = -num;
    den = -den;
  }
  const std::int64_t g = std::gcd(num, den);
  return Rational{num / g, den / g};
}

// Signed integer or decimal.
std::optional<Rational> parse_decimal(std::string_view text) {
  bool negative = false;
  if (!text.empty() && (text.front() == '-' || text.front() == '+')) {
    negative = text.front() == '-';
    text.remove_prefix(1);
  }
  const auto dot = text.find('.');
  std::string_view whole = text.substr(0, dot);
  std::string_view frac = dot == std::string_view::npos ? std::string_view{} : text.substr(dot + 1);
  if (whole.empty() && frac.empty()) return std::nullopt;
  if (dot != std::string_view::npos && frac.empty() && whole.empty()) return std::nullopt;
  std::string digits(whole);
  digits += frac;
  auto num = parse_digits(digits);
  if (!num) return std::nullopt;
  std::int64_t den = 1;
  for (std::size_t i = 0; i < frac.size(); ++i) {
    if (mul_overflows(den, 10, &den)) return std::nullopt;
  }
  return make(negative ? -*num : *num, den);
}

std::optional<Rational> divide(const Rational& a, const Rational& b) {
  if (b.num == 0) return std::nullopt;
  std::int64_t num = 0;
  std::int64_t den = 0;
  if (mul_overflows(a.num, b.den, &num) || mul_overflows(a.den, b.num, &den)) return std::nullopt;
  return make(num, den);
}

}  // namespace

std::optional<std::string> extract_boxed(std::string_view response) {
  std::optional<std::string> last;
  std::size_t pos = 0;
  while ((pos = response.find(kBoxed, pos)) != std::string_view::npos) {
    const std::size_t body = pos + kBoxed.size();
    if (auto close = close_brace(response, body)) {
      last = std::string(response.substr(body, *close - body));
      pos = *close + 1;
    } else {
      break;
    }
  }
  return last;
}

std::string normalize_answer(std::string_view answer) {
  std::string out;
  for (char c : answer) {
    if (!std::isspace(static_cast<unsigned char>(c))) out += c;
  }
  if (out.size() >= 2 && out.front() == '$' && out.back() == '$') out = out.substr(1, out.size() - 2);
  return out;
}

std::optional<Rational> parse_rational(std::string_view raw) {
  const std::string text = normalize_answer(raw);
  std::string_view view = text;
  bool negative = false;
  if (!view.empty() && view.front() == '-') {
    negative = true;
    view.remove_prefix(1);
  }
  for (std::string_view macro : {std::string_view("\\dfrac{"), std::string_view("\\frac{")}) {
    if (view.substr(0, macro.size()) != macro) continue;
    const auto num_end = close_brace(view, macro.size());
    if (!num_end || *num_end + 1 >= view.size() || view[*num_end + 1] != '{') return std::nullopt;
    const auto den_end = close_brace(view, *num_end + 2);
    if (!den_end || *den_end + 1 != view.size()) return std::nullopt;
    auto num = parse_decimal(view.substr(macro.size(), *num_end - macro.size()));
    auto den = parse_decimal(view.substr(*num_end + 2, *den_end - *num_end - 2));
    if (!num || !den) return std::nullopt;
    auto value = divide(*num, *den);
    if (value && negative) value->num = -value->num;
    return value;
  }
  if (const auto slash = view.find('/'); slash != std::string_view::npos) {
    auto num = parse_decimal(view.substr(0, slash));
    auto den = parse_decimal(view.substr(slash + 1));
    if (!num || !den) return std::nullopt;
    auto value = divide(*num, *den);
    if (value && negative) value->num = -value->num;
    return value;
  }
  auto value = parse_decimal(view);
  if (value && negative) value->num = -value->num;
  return value;
}

bool answers_equal(std::string_view candidate, std::string_view gold) {
  const auto a = parse_rational(candidate);
  const auto b = parse_rational(gold);
  if (a && b) return *a == *b;
  return normalize_answer(candidate) == normalize_answer(gold);
}

bool boxed_answer_matches(std::string_view response, std::string_view gold) {
  const auto boxed = extract_boxed(response);
  return boxed && answers_equal(*boxed, gold);
}

}  // namespace kpsel
