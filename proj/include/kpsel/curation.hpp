#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "kpsel/answer.hpp"
#include "kpsel/chat.hpp"
#include "kpsel/core.hpp"
#include "kpsel/prompts.hpp"
#include "kpsel/store.hpp"

namespace kpsel {

/// Settings shared by every stage that talks to an endpoint.
struct PipelineOptions {
  EndpointConfig endpoint;
  AnswerMatcher matcher = boxed_answer_matches;
  std::uint64_t seed = 0;
  int parallelism = 1;
  int max_attempts = 8;  // solution generation
};

/// Per-request sampling seed. Distinct for every (purpose, problem, item,
/// run, sample) so recorded transcripts can be replayed in any order.
std::uint64_t request_seed(std::uint64_t seed, std::string_view purpose,
                           std::string_view problem_id, std::string_view item, int run,
                           int sample);

class UnsolvedError : public Error {
 public:
  UnsolvedError(std::string problem_id, int attempts);
  const std::string& problem_id() const { return problem_id_; }
  int attempts() const { return attempts_; }

 private:
  std::string problem_id_;
  int attempts_;
};

struct SolutionResult {
  std::string solution;
  int attempts = 0;
};

/// Samples unhinted responses until one matches the gold answer, then stores
/// it as the problem's reference solution. Throws UnsolvedError after
/// `options.max_attempts` misses.
SolutionResult generate_solution(Problem& problem, ChatClient& client,
                                 const PipelineOptions& options);

struct ExtractedItem {
  std::string knowledge;
  std::string considerations;
};

/// Parses a numbered list whose items carry an "(a)" knowledge part and a
/// "(b)" considerations part. Multi-line parts are joined with single
/// spaces. Throws ParseError (carrying the raw reply) when the reply has no
/// numbered items or an item lacks part (b).
std::vector<ExtractedItem> parse_kp_list(std::string_view reply);

/// Renders the extraction template and parses the reply into raw KPs with
/// indices 0..n-1.
std::vector<KnowledgePoint> extract_kps(const Problem& problem, std::string_view solution,
                                        ChatClient& client, const PipelineOptions& options);

struct LeakageVerdict {
  std::string problem_id;
  int kp_index = 0;
  bool strongly_coupled = false;
  std::string reason;
};

/// First balanced `{...}` block in `text`, honoring JSON string quoting.
std::optional<std::string> first_brace_block(std::string_view text);

/// Reads `strongly_coupled` (boolean) and `reason` (string) from the first
/// brace block of the reply. Throws ParseError (carrying the raw reply) for
/// anything else.
LeakageVerdict parse_leakage_verdict(std::string_view reply, const std::string& problem_id,
                                     int kp_index);

/// Reviews one raw KP. On success the KP becomes verified (not coupled) or
/// needs_revision (coupled); on a parse error its status is left unchanged.
LeakageVerdict verify_leakage(const Problem& problem, KnowledgePoint& kp, ChatClient& client,
                              const PipelineOptions& options);

/// Append-only log of scored samples in the raw rollout schema. Samples
/// already present are skipped on resume.
class ProgressLog {
 public:
  explicit ProgressLog(std::filesystem::path path);

  bool contains(const std::string& problem_id, const Configuration& config, int run,
                int sample) const;
  void record(const RolloutRecord& record);
  /// Outcomes recorded for one cell, keyed by (run, sample).
  std::map<std::pair<int, int>, bool> outcomes(const std::string& problem_id,
                                               const Configuration& config) const;

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, Configuration>, std::map<std::pair<int, int>, bool>> done_;
};

/// Evaluation stopped before every sample was scored. `run()` and `sample()`
/// name the first unscored sample in run-major order.
class PartialRunError : public Error {
 public:
  PartialRunError(const std::string& what, std::string problem_id, Configuration config, int run,
                  int sample, std::size_t completed);
  const std::string& problem_id() const { return problem_id_; }
  const Configuration& config() const { return config_; }
  int run() const { return run_; }
  int sample() const { return sample_; }
  std::size_t completed() const { return completed_; }

 private:
  std::string problem_id_;
  Configuration config_;
  int run_;
  int sample_;
  std::size_t completed_;
};

/// The hinted prompt for `config`: the selected KPs, in index order, under
/// the hint header.
std::string configuration_prompt(const Problem& problem, std::span<const KnowledgePoint> kps,
                                 const Configuration& config);

/// Samples runs x samples_per_run completions of the configuration's prompt
/// and counts matches per run. With a log, scored samples are appended as
/// they complete and skipped when already present.
RunCounts evaluate_config(const Problem& problem, std::span<const KnowledgePoint> kps,
                          const Configuration& config, ChatClient& client,
                          const PipelineOptions& options, int runs, int samples_per_run,
                          ProgressLog* log = nullptr);

/// Rollout provider backed by a chat endpoint.
class EndpointProvider final : public Provider {
 public:
  EndpointProvider(const Dataset& dataset, ChatClient& client, PipelineOptions options,
                   ProgressLog* log = nullptr);
  RunCounts evaluate(const EvaluationRequest& request) override;

 private:
  const Dataset& dataset_;
  ChatClient& client_;
  PipelineOptions options_;
  ProgressLog* log_;
};

/// Scores arbitrary prompts through a chat endpoint.
class EndpointPromptEvaluator final : public PromptEvaluator {
 public:
  EndpointPromptEvaluator(ChatClient& client, PipelineOptions options);
  RunCounts evaluate_prompt(const Problem& problem, const std::string& prompt, int runs,
                            int samples_per_run) override;

 private:
  ChatClient& client_;
  PipelineOptions options_;
};

struct CurationEntry {
  std::string problem_id;
  int solution_attempts = 0;  // 0 when the reference solution pre-existed
  int extracted = 0;
  int verified = 0;
  int needs_revision = 0;
  std::string error;  // empty on success
};

struct CurationReport {
  std::vector<CurationEntry> entries;  // ordered by problem id
  std::size_t failures() const;
};

json to_json(const CurationEntry& entry);

/// Runs solution generation, KP extraction and leakage review over every
/// problem that has no KPs or still has raw ones. Problems whose KPs are all
/// past review are left alone. Per-problem failures are recorded, not thrown.
CurationReport curate(Dataset& dataset, ChatClient& client, const PipelineOptions& options);

struct ExportOptions {
  double injection_threshold = 0.9;
};

struct ExportSummary {
  std::size_t exported = 0;
  std::size_t hinted = 0;
  std::size_t skipped = 0;
  double mean_selected_kps = 0.0;
  double mean_all_kps = 0.0;
  double reduction_percent = 0.0;  // rounded to one decimal
};

struct SkippedProblem {
  std::string problem_id;
  std::string reason;
};

struct ExportResult {
  std::vector<json> records;  // ordered by problem id
  std::vector<SkippedProblem> skipped;
  ExportSummary summary;
};

json to_json(const ExportSummary& summary);

/// 100 * (1 - selected / all), rounded half away from zero to one decimal.
double reduction_percent(double mean_selected, double mean_all);

/// One record per problem with a selection: id, prompt, answer, selected
/// indices and whether a hint was injected. A hint is injected only for a
/// non-empty selection on a problem whose unhinted accuracy is below the
/// threshold.
ExportResult export_training_data(const Dataset& dataset,
                                  const std::vector<SelectionOutcome>& selections,
                                  const ExportOptions& options = {});

}  // namespace kpsel
