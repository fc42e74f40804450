#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kpsel/core.hpp"
#include "kpsel/store.hpp"

namespace kpsel {

inline constexpr double kOneSample = 1.0 / 32.0;

struct PhiParams {
  double epsilon = 0.0;
  // Use the set printed in the original formula, S = {i : A_-i < max(A_K, A_0) - eps},
  // and return K \ S. Kept for auditing; the default removes the KPs whose
  // single removal does not hurt.
  bool strict_paper_formula = false;
};

/// Constrained search space derived from the leave-one-out cells.
struct CssPartition {
  std::vector<int> h;      // non-degrading removals
  std::vector<int> n_set;  // near-optimal removals, subset of h
  std::vector<int> c;      // h minus n_set; enumerated
  double a_max = 0.0;      // max_i A_-i (0 when n = 0)
};

struct CssOptions {
  int enumeration_cap = 16;
};

enum class TieBreakPath { intersection, vote, variance, cardinality };
std::string_view to_string(TieBreakPath path);

struct ConsensusReport {
  std::vector<std::vector<Configuration>> per_run_near_optimal;
  std::vector<Configuration> consensus;
  double delta = kOneSample;
  Configuration winner;
  TieBreakPath tie_break_path = TieBreakPath::intersection;
};

json to_json(const ConsensusReport& report);
json to_json(const CssPartition& partition);

/// The n + 2 configurations {0, K, K\{k_i}} in canonical order, deduplicated.
std::vector<Configuration> loo_candidates(int n_kps);

SelectionOutcome select_none(const AccuracyTable& table);
SelectionOutcome select_all(const AccuracyTable& table);
/// Picks 2 or 3 KPs uniformly (clamped to n), members without replacement.
/// Deterministic in (seed, problem id). The chosen configuration is evaluated
/// through `request` when absent from the table; without a requester the
/// outcome carries no accuracy.
SelectionOutcome select_random(const AccuracyTable& table, std::uint64_t seed,
                               const CellRequester& request = {});
SelectionOutcome select_max_score(const AccuracyTable& table);
SelectionOutcome select_phi(const AccuracyTable& table, const PhiParams& params,
                            const CellRequester& request = {});

CssPartition css_partition(const AccuracyTable& table);
/// {K \ (N u T) : T subset of C} u {0, K}, deduplicated and sorted. Throws
/// CapExceededError when |C| > cap.
std::vector<Configuration> css_candidates(const CssPartition& partition, int n_kps, int cap);
SelectionOutcome select_css(const AccuracyTable& table, const CellRequester& request,
                            const CssOptions& options = {});

ConsensusReport cbrs_consensus(const AccuracyTable& table, double delta = kOneSample);
SelectionOutcome select_cbrs(const AccuracyTable& table, double delta = kOneSample);

/// Argmax over all 2^n subsets. Verification oracle for small n.
SelectionOutcome select_exhaustive(const AccuracyTable& table, const CellRequester& request,
                                   int cap = 12);

struct SelectionParams {
  Strategy strategy = Strategy::none;
  double epsilon = kOneSample;  // t_loo; s_loo always uses 0
  bool strict_paper_formula = false;
  double delta = kOneSample;
  int css_cap = 16;
  int exhaustive_cap = 12;
  std::uint64_t seed = 0;
  int parallelism = 1;
};

SelectionOutcome select(const AccuracyTable& table, const SelectionParams& params,
                        const CellRequester& request = {});

struct BatchFailure {
  std::string problem_id;
  std::string message;
};

struct BatchSummary {
  Strategy strategy = Strategy::none;
  std::size_t problem_count = 0;
  std::size_t failures = 0;
  double avg_kp = 0.0;
  std::optional<double> avg_accuracy;
  std::int64_t evaluations = 0;
};

json to_json(const BatchSummary& summary);

struct BatchResult {
  std::vector<SelectionOutcome> outcomes;  // ordered by problem id
  std::vector<BatchFailure> failures;
  BatchSummary summary;
};

using RequesterFactory = std::function<CellRequester(const std::string& problem_id)>;

/// Runs one strategy over every problem that has a table or a problem record.
/// Per-problem errors are collected, not thrown; the summary covers successes.
BatchResult batch_select(const Dataset& dataset, const SelectionParams& params,
                         const RequesterFactory& requesters = {});

}  // namespace kpsel
