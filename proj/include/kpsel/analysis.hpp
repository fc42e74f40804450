#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kpsel/core.hpp"
#include "kpsel/prompts.hpp"
#include "kpsel/selection.hpp"
#include "kpsel/store.hpp"

namespace kpsel {

/// {i : A_-i >= max(A_K, A_0)}. Throws NotEvaluatedError listing missing cells.
std::vector<int> positive_contribution_set(const AccuracyTable& table);

struct ParadoxOptions {
  int m = 2;
  int subset_cap = 64;  // per problem; sampled uniformly beyond it
  std::uint64_t seed = 0;
};

/// One examined subset S of K+.
struct ParadoxPair {
  std::string problem_id;
  Configuration subset;
  double a_joint = 0.0;        // A(K \ S)
  double a_single_mean = 0.0;  // mean of A_-i over S
  bool paradox = false;        // a_joint < a_single_mean
};

struct ParadoxProblem {
  std::string problem_id;
  int k_plus = 0;
  std::uint64_t available = 0;  // C(|K+|, m)
  std::size_t examined = 0;
  std::size_t paradoxes = 0;
  bool sampled = false;
};

struct ParadoxReport {
  int m = 2;
  int subset_cap = 64;
  std::size_t pairs_examined = 0;
  std::size_t paradox_pairs = 0;
  double p_m = 0.0;                       // pooled over every examined pair
  std::optional<double> delta_m;          // null when no pair is a paradox
  std::optional<double> p_m_per_problem;  // mean of per-problem rates
  std::vector<ParadoxPair> details;
  std::vector<ParadoxProblem> problems;
  std::vector<BatchFailure> failures;
};

json to_json(const ParadoxReport& report);

/// Examines every size-m subset of each problem's K+ (a seeded uniform
/// sample of `subset_cap` when there are more). Joint-removal cells missing
/// from a table are requested through `requesters`; problems that cannot be
/// completed are reported as failures.
ParadoxReport paradox_stats(const Dataset& dataset, const ParadoxOptions& options,
                            const RequesterFactory& requesters = {});

/// Equal-width edges over [0, 1].
std::vector<double> default_bucket_edges(int bins = 10);

inline constexpr std::array<double, 5> kBucketPercentiles{5, 25, 50, 75, 95};

struct BucketStats {
  double lo = 0.0;
  double hi = 0.0;
  std::size_t n = 0;
  std::optional<double> mu_wo;
  std::optional<double> mu_with;
  std::optional<std::array<double, 5>> percentiles;  // of hinted accuracy
};

struct BucketReport {
  std::vector<double> edges;
  std::vector<BucketStats> buckets;
  std::vector<BatchFailure> failures;
};

json to_json(const BucketReport& report);

/// Index of the bucket holding `value`: intervals are right-open except the
/// last, which is closed.
std::size_t bucket_index(const std::vector<double>& edges, double value);

/// Linear-interpolation percentile of a non-empty sample (q in [0, 100]).
double percentile(std::vector<double> values, double q);

/// Groups problems by no-KP accuracy. Each problem with a hinted selection
/// contributes its A_0 and the pooled accuracy of the selected
/// configuration. Edges must increase strictly from 0 to 1.
BucketReport difficulty_buckets(const Dataset& dataset,
                                const std::vector<SelectionOutcome>& hinted,
                                const std::vector<double>& edges);

struct CountDistribution {
  std::optional<int> run;  // nullopt: counts pooled over all runs
  int max_count = 0;
  std::size_t problems = 0;
  std::vector<std::size_t> histogram;  // index = correct count
  std::vector<double> fractions;
};

json to_json(const CountDistribution& distribution);

/// Histogram of per-problem correct counts for one configuration per
/// problem, either in a single run (0..samples_per_run) or pooled over runs
/// (0..runs * samples_per_run). Throws NotEvaluatedError for missing cells.
CountDistribution correct_count_distribution(
    const Dataset& dataset, const std::map<std::string, Configuration>& config_per_problem,
    std::optional<int> run = 0);

/// Mean per-problem Jaccard similarity (1 when both sets are empty). Throws
/// ValidationError listing the symmetric difference of problem ids.
double strategy_jaccard(const std::vector<SelectionOutcome>& a,
                        const std::vector<SelectionOutcome>& b);

struct PrefixPoint {
  double ratio = 0.0;
  std::size_t tokens = 0;
  std::string hint_text;
  RunCounts counts;
  double accuracy = 0.0;
};

/// Accuracy when the hint is the first ceil(r/100 * T) whitespace tokens of
/// the reference solution. Throws ValidationError without a solution.
std::vector<PrefixPoint> prefix_sweep(const Problem& problem, const std::vector<double>& ratios,
                                      PromptEvaluator& evaluator, int runs, int samples_per_run);

json to_json(const PrefixPoint& point);

// Whitespace-aligned columns with a header row, for plotting tools.
std::string prefix_columns(const std::vector<PrefixPoint>& points);
std::string bucket_columns(const BucketReport& report);
std::string distribution_columns(const CountDistribution& distribution);

}  // namespace kpsel
