#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kpsel/core.hpp"

namespace kpsel {

// Literal prompt assets, embedded byte-for-byte from assets/prompts/.
std::string_view extraction_template();
std::string_view leakage_template();
std::string_view augmented_prompt_template();

inline constexpr std::string_view kHintHeader = "## Hint";
inline constexpr std::string_view kClosingInstruction =
    "Please reason step by step, and put your final answer within \\boxed{}.";

/// Format-string rendering: `{name}` is replaced when `name` is a key of
/// `values`, `{{` and `}}` collapse to single braces, and anything else
/// (including `{}` and unknown names) is copied verbatim.
std::string render_template(std::string_view tmpl,
                            const std::map<std::string, std::string>& values);

std::string render_extraction_prompt(std::string_view question, std::string_view solution);
std::string render_leakage_prompt(std::string_view question, std::string_view knowledge);

/// `## Hint` followed by one numbered item per KP:
///
///     1. **Knowledge Point**: <knowledge>
///     **Key Considerations**: <considerations>
///
/// Lines are joined with '\n' and there is no trailing newline. An empty
/// sequence yields "". Throws ValidationError for KPs that are not verified
/// or revised.
std::string emit_hint_block(std::span<const KnowledgePoint> kps);

/// Statement, blank line, hint block (omitted when empty), blank line, closing
/// instruction.
std::string emit_prompt(std::string_view statement, std::string_view hint_block);
inline std::string emit_prompt(const Problem& problem, std::string_view hint_block) {
  return emit_prompt(problem.statement, hint_block);
}

struct HintItem {
  std::string knowledge;
  std::string considerations;

  friend bool operator==(const HintItem&, const HintItem&) = default;
};

/// Inverse of emit_hint_block for single-line KP texts.
std::vector<HintItem> parse_hint_block(std::string_view block);

/// Text between the `## Hint` header and the closing instruction of a
/// rendered prompt, or nullopt when the prompt carries no hint.
std::optional<std::string> extract_hint_body(std::string_view prompt);

/// Splits on ASCII whitespace.
std::vector<std::string> whitespace_tokens(std::string_view text);

/// First ceil(ratio_percent / 100 * T) whitespace tokens of `solution` joined
/// by single spaces, where T is the token count. Ratio is clamped to [0, 100].
std::string solution_prefix(std::string_view solution, double ratio_percent);

/// Hint block for a raw text prefix: "## Hint\n<prefix>", or "" when the
/// prefix is empty.
std::string prefix_hint_block(std::string_view prefix);

/// Scores rendered prompts by sampling completions.
class PromptEvaluator {
 public:
  virtual ~PromptEvaluator() = default;
  virtual RunCounts evaluate_prompt(const Problem& problem, const std::string& prompt, int runs,
                                    int samples_per_run) = 0;
};

}  // namespace kpsel
