#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>

namespace kpsel {

/// Content of the last balanced `\boxed{...}` in `response`.
std::optional<std::string> extract_boxed(std::string_view response);

/// Removes all ASCII whitespace and one pair of enclosing `$`.
std::string normalize_answer(std::string_view answer);

struct Rational {
  std::int64_t num = 0;
  std::int64_t den = 1;  // > 0, gcd(num, den) = 1

  friend bool operator==(const Rational&, const Rational&) = default;
};

/// Integer, decimal, `a/b`, `\frac{a}{b}` or `\dfrac{a}{b}` (after
/// normalization). Nullopt for anything else, including values whose exact
/// form overflows 64 bits.
std::optional<Rational> parse_rational(std::string_view text);

/// True when the extracted candidate equals the gold answer: rationally when
/// both parse as numbers, otherwise as normalized strings.
bool answers_equal(std::string_view candidate, std::string_view gold);

/// Decides whether a model response answers the problem correctly.
using AnswerMatcher = std::function<bool(std::string_view response, std::string_view gold)>;

/// Default matcher: last `\boxed{}` content compared with answers_equal. A
/// response without a boxed answer is incorrect.
bool boxed_answer_matches(std::string_view response, std::string_view gold);

}  // namespace kpsel
