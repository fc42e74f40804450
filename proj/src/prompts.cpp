#include "kpsel/prompts.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace kpsel {

namespace {

constexpr std::string_view kKnowledgeLabel = "**Knowledge Point**: ";
constexpr std::string_view kConsiderationsLabel = "**Key Considerations**: ";

bool is_identifier(std::string_view name) {
  if (name.empty()) return false;
  for (char c : name) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  }
  return true;
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    lines.push_back(text.substr(pos, end - pos));
    pos = end + 1;
  }
  return lines;
}

}  // namespace

std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  for (std::size_t i = 0; i < tmpl.size(); ++i) {
    const char c = tmpl[i];
    if (c == '{' && i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
      out += '{';
      ++i;
      continue;
    }
    if (c == '}' && i + 1 < tmpl.size() && tmpl[i + 1] == '}') {
      out += '}';
      ++i;
      continue;
    }
    if (c == '{') {
      const std::size_t close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const std::string_view name = tmpl.substr(i + 1, close - i - 1);
        if (is_identifier(name)) {
          if (auto it = values.find(std::string(name)); it != values.end()) {
            out += it->second;
            i = close;
            continue;
          }
        }
      }
    }
    out += c;
  }
  return out;
}

std::string render_extraction_prompt(std::string_view question, std::string_view solution) {
  return render_template(extraction_template(),
                         {{"question", std::string(question)}, {"solution", std::string(solution)}});
}

std::string render_leakage_prompt(std::string_view question, std::string_view knowledge) {
  return render_template(leakage_template(), {{"question", std::string(question)},
                                              {"knowledge", std::string(knowledge)}});
}

std::string emit_hint_block(std::span<const KnowledgePoint> kps) {
  if (kps.empty()) return {};
  std::string out(kHintHeader);
  int number = 1;
  for (const auto& kp : kps) {
    if (!is_final(kp.status)) {
      throw ValidationError("KP " + std::to_string(kp.index) + " of problem '" + kp.problem_id +
                            "' has status " + std::string(to_string(kp.status)) +
                            "; only verified or revised KPs can be emitted");
    }
    out += '\n';
    out += std::to_string(number++);
    out += ". ";
    out += kKnowledgeLabel;
    out += kp.knowledge;
    out += '\n';
    out += kConsiderationsLabel;
    out += kp.considerations;
  }
  return out;
}

std::string emit_prompt(std::string_view statement, std::string_view hint_block) {
  std::string skeleton(augmented_prompt_template());
  if (hint_block.empty()) {
    const std::string slot = "{hint}\n\n";
    if (auto pos = skeleton.find(slot); pos != std::string::npos) skeleton.erase(pos, slot.size());
  }
  return render_template(skeleton, {{"question", std::string(statement)},
                                    {"hint", std::string(hint_block)}});
}

std::vector<HintItem> parse_hint_block(std::string_view block) {
  std::vector<HintItem> items;
  if (block.empty()) return items;
  const auto lines = split_lines(block);
  if (lines.front() != kHintHeader) throw ParseError("hint block must start with '## Hint'");
  if ((lines.size() - 1) % 2 != 0) throw ParseError("hint block has an unpaired line");
  for (std::size_t i = 1; i + 1 < lines.size(); i += 2) {
    const std::string prefix = std::to_string(items.size() + 1) + ". " + std::string(kKnowledgeLabel);
    std::string_view first = lines[i];
    std::string_view second = lines[i + 1];
    if (first.substr(0, prefix.size()) != prefix) {
      throw ParseError("hint item " + std::to_string(items.size() + 1) + " is malformed");
    }
    if (second.substr(0, kConsiderationsLabel.size()) != kConsiderationsLabel) {
      throw ParseError("hint item " + std::to_string(items.size() + 1) +
                       " lacks its key considerations");
    }
    items.push_back({std::string(first.substr(prefix.size())),
                     std::string(second.substr(kConsiderationsLabel.size()))});
  }
  return items;
}

std::optional<std::string> extract_hint_body(std::string_view prompt) {
  const std::string marker = "\n\n" + std::string(kHintHeader) + "\n";
  const auto start = prompt.find(marker);
  if (start == std::string_view::npos) return std::nullopt;
  const auto body = start + marker.size();
  const std::string tail = "\n\n" + std::string(kClosingInstruction);
  auto end = prompt.rfind(tail);
  if (end == std::string_view::npos || end < body) end = prompt.size();
  return std::string(prompt.substr(body, end - body));
}

std::vector<std::string> whitespace_tokens(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    const std::size_t start = i;
    while (i < text.size() && !std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    if (i > start) tokens.emplace_back(text.substr(start, i - start));
  }
  return tokens;
}

std::string solution_prefix(std::string_view solution, double ratio_percent) {
  const auto tokens = whitespace_tokens(solution);
  const double ratio = std::clamp(ratio_percent, 0.0, 100.0);
  // ratio * T is formed first so integral ratios divide exactly.
  const auto keep = static_cast<std::size_t>(
      std::ceil(ratio * static_cast<double>(tokens.size()) / 100.0));
  std::string out;
  for (std::size_t i = 0; i < keep && i < tokens.size(); ++i) {
    if (i != 0) out += ' ';
    out += tokens[i];
  }
  return out;
}

std::string prefix_hint_block(std::string_view prefix) {
  if (prefix.empty()) return {};
  return std::string(kHintHeader) + "\n" + std::string(prefix);
}

}  // namespace kpsel
