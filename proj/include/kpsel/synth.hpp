#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kpsel/chat.hpp"
#include "kpsel/core.hpp"
#include "kpsel/prompts.hpp"
#include "kpsel/store.hpp"

namespace kpsel {

/// Logistic ground truth for one problem:
/// P(correct | S) = sigmoid(base + sum_{i in S} w_i + sum_{i<j in S} w_ij).
struct SyntheticWorld {
  std::string problem_id;
  int n_kps = 0;
  double base = 0.0;
  std::vector<double> main_effects;
  std::map<std::pair<int, int>, double> pair_effects;  // keys i < j
  std::uint64_t seed = 0;
};

double sigmoid(double x);
double true_probability(const SyntheticWorld& world, const Configuration& config);

enum class SampleMode { sampled, exact };

/// Per-run correct counts. Sampled mode draws one Bernoulli per (run,
/// sample) from a counter-based stream keyed on (world seed, problem, config,
/// run, sample). Exact mode reports round(p * samples_per_run) in every run.
RunCounts sample_rollouts(const SyntheticWorld& world, const Configuration& config, int runs,
                          int samples_per_run, SampleMode mode = SampleMode::sampled);

/// Argmax of true_probability over all 2^n subsets with the standard
/// tie-break. Throws CapExceededError when n > cap.
Configuration ground_truth_best(const SyntheticWorld& world, int cap = 12);

/// Table holding the n + 2 cells {0, K, K\i}.
AccuracyTable loo_table(const SyntheticWorld& world, int runs, int samples_per_run,
                        SampleMode mode);

struct EffectDistributions {
  int min_kps = 3;
  int max_kps = 6;
  double base_mean = -1.0;
  double base_sd = 1.0;
  double main_mean = 0.6;
  double main_sd = 0.5;
  double zero_fraction = 0.3;     // main effect set to exactly 0
  double paradox_fraction = 0.3;  // per pair of positive-effect KPs
  double pair_mean = -1.5;
  double pair_sd = 0.5;

  void validate() const;
};

json to_json(const EffectDistributions& effects);
EffectDistributions effects_from_json(const json& value, EffectDistributions base = {});

struct Benchmark {
  Dataset dataset;  // problems and verified KPs; no tables
  std::vector<SyntheticWorld> worlds;
};

/// Reproducible population. Problem ids are "syn-00000", "syn-00001", ...
/// Planted pair effects are never positive.
Benchmark generate_benchmark(int n_problems, const EffectDistributions& effects,
                             std::uint64_t seed);

/// Problem record and verified KP texts of a world; pure functions of the
/// world's id and seed.
Problem synthetic_problem(const SyntheticWorld& world);
std::vector<KnowledgePoint> synthetic_kps(const SyntheticWorld& world);

json to_json(const SyntheticWorld& world);
SyntheticWorld world_from_json(const json& record, std::size_t line);
void write_worlds(const std::filesystem::path& path, const std::vector<SyntheticWorld>& worlds);
std::vector<SyntheticWorld> read_worlds(const std::filesystem::path& path);

/// Rollout provider answering from synthetic worlds.
class SyntheticProvider final : public Provider {
 public:
  explicit SyntheticProvider(std::vector<SyntheticWorld> worlds,
                             SampleMode mode = SampleMode::sampled);
  RunCounts evaluate(const EvaluationRequest& request) override;
  const SyntheticWorld& world(const std::string& problem_id) const;

 private:
  std::map<std::string, SyntheticWorld> worlds_;
  SampleMode mode_;
};

/// A world whose accuracy depends only on how much of a reference solution
/// the hint reveals: sigmoid(base) until the hint holds the first
/// `jump_token` solution tokens, sigmoid(base + jump_effect) afterwards.
struct ThresholdWorld {
  Problem problem;  // reference_solution holds the tokens
  int jump_token = 4;
  double base = -1.5;
  double jump_effect = 3.0;
  std::uint64_t seed = 0;
};

ThresholdWorld make_threshold_world(int n_tokens = 10, int jump_token = 4);

class ThresholdPromptEvaluator final : public PromptEvaluator {
 public:
  ThresholdPromptEvaluator(ThresholdWorld world, SampleMode mode);
  RunCounts evaluate_prompt(const Problem& problem, const std::string& prompt, int runs,
                            int samples_per_run) override;
  double probability(const std::string& prompt) const;

 private:
  double logit(const std::string& prompt) const;

  ThresholdWorld world_;
  SampleMode mode_;
  std::vector<std::string> tokens_;
};

/// Deterministic stand-in for a chat model over synthetic worlds.
/// Extraction prompts are answered with the world's KPs as an (a)/(b) list,
/// leakage prompts with a not-coupled verdict, and solve prompts with a
/// boxed answer that is correct with the world's probability for the hinted
/// configuration, drawn from the request seed.
class SimulatedChatModel final : public ChatClient {
 public:
  explicit SimulatedChatModel(const std::vector<SyntheticWorld>& worlds);
  std::string complete(const json& request) override;

 private:
  struct Entry {
    Problem problem;
    std::vector<KnowledgePoint> kps;
    SyntheticWorld world;
  };
  const Entry& entry_for_statement(std::string_view statement) const;

  std::map<std::string, Entry> by_statement_;
};

/// HTTP front end: POST /evaluate takes {"problem_id", "config", "runs",
/// "samples_per_run"} and returns {"run_counts"}; POST
/// /v1/chat/completions forwards to an optional chat model.
class SynthServer {
 public:
  SynthServer(Provider& provider, ChatClient* chat = nullptr);
  ~SynthServer();
  SynthServer(const SynthServer&) = delete;
  SynthServer& operator=(const SynthServer&) = delete;

  /// Binds to `port` (0 picks a free one) and returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks serving requests until stop().
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Provider that forwards requests to a SynthServer.
class HttpRolloutProvider final : public Provider {
 public:
  explicit HttpRolloutProvider(std::string base_url);
  RunCounts evaluate(const EvaluationRequest& request) override;

 private:
  std::string base_url_;
};

}  // namespace kpsel
