#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kpsel/errors.hpp"

namespace kpsel {

struct Problem {
  std::string id;
  std::string statement;
  std::optional<std::string> reference_solution;
  std::string gold_answer;
};

enum class KpStatus { raw, verified, needs_revision, revised };

std::string_view to_string(KpStatus status);
KpStatus parse_kp_status(std::string_view text);

// Only verified or revised KPs may be selected or exported.
inline bool is_final(KpStatus status) {
  return status == KpStatus::verified || status == KpStatus::revised;
}

struct KnowledgePoint {
  std::string problem_id;
  int index = 0;
  std::string knowledge;
  std::string considerations;
  KpStatus status = KpStatus::raw;
};

/// A subset of a problem's KP index set, kept strictly increasing.
///
/// The default-constructed value is the empty configuration. Ordering is
/// lexicographic over the index sequence, so two configurations compare equal
/// iff they hold the same set.
class Configuration {
 public:
  Configuration() = default;

  /// Sorts and deduplicates `indices`. Throws ValidationError naming the
  /// first index outside [0, n_kps).
  static Configuration canonicalize(std::span<const int> indices, int n_kps);
  static Configuration canonicalize(std::initializer_list<int> indices, int n_kps) {
    return canonicalize(std::span<const int>(indices.begin(), indices.size()), n_kps);
  }
  static Configuration full(int n_kps);

  Configuration without(int index) const;
  Configuration without(const Configuration& removed) const;

  bool contains(int index) const;
  bool empty() const { return indices_.empty(); }
  std::size_t size() const { return indices_.size(); }
  const std::vector<int>& indices() const { return indices_; }
  auto begin() const { return indices_.begin(); }
  auto end() const { return indices_.end(); }

  /// Canonical serialized form, e.g. "[0,2]".
  std::string key() const;

  friend auto operator<=>(const Configuration&, const Configuration&) = default;
  friend bool operator==(const Configuration&, const Configuration&) = default;

 private:
  explicit Configuration(std::vector<int> sorted) : indices_(std::move(sorted)) {}
  std::vector<int> indices_;
};

/// Tie-break order shared by every selector: fewer KPs first, then the
/// lexicographically smallest canonical form.
inline bool preferred_on_tie(const Configuration& a, const Configuration& b) {
  if (a.size() != b.size()) return a.size() < b.size();
  return a < b;
}

using RunCounts = std::vector<int>;

/// Per-configuration, per-run correct counts for one problem.
///
/// Every cell holds exactly `runs` counts, each in [0, samples_per_run]. The
/// table is sparse: configurations appear only once evaluated.
class AccuracyTable {
 public:
  AccuracyTable() = default;
  AccuracyTable(std::string problem_id, int n_kps, int runs = 8, int samples_per_run = 32);

  const std::string& problem_id() const { return problem_id_; }
  int n_kps() const { return n_kps_; }
  int runs() const { return runs_; }
  int samples_per_run() const { return samples_per_run_; }
  std::int64_t total_samples() const {
    return static_cast<std::int64_t>(runs_) * samples_per_run_;
  }

  /// Inserts a cell. Re-inserting identical counts is a no-op; different
  /// counts for an existing cell raise ConflictError.
  void insert(const Configuration& config, RunCounts counts);
  void validate_counts(const Configuration& config, const RunCounts& counts) const;

  bool contains(const Configuration& config) const { return cells_.count(config) != 0; }
  const RunCounts& counts(const Configuration& config) const;
  const std::map<Configuration, RunCounts>& cells() const { return cells_; }

  /// Sum of correct samples across runs.
  std::int64_t correct(const Configuration& config) const;
  double pooled_accuracy(const Configuration& config) const;
  double run_accuracy(const Configuration& config, int run) const;
  /// Population variance of the per-run accuracies (divides by `runs`).
  double run_variance(const Configuration& config) const;
  /// runs * sum(c_j^2) - (sum c_j)^2. Proportional to run_variance with a
  /// positive factor shared by every cell, so it orders cells exactly.
  std::int64_t variance_key(const Configuration& config) const;

 private:
  std::string problem_id_;
  int n_kps_ = 0;
  int runs_ = 8;
  int samples_per_run_ = 32;
  std::map<Configuration, RunCounts> cells_;
};

enum class Strategy { none, all, random, max_score, s_loo, t_loo, css, cbrs, exhaustive };

/// File-format name, e.g. "max_score".
std::string_view to_string(Strategy strategy);
/// Accepts both the file-format name and the CLI spelling ("max-score").
Strategy parse_strategy(std::string_view text);

struct SelectionOutcome {
  std::string problem_id;
  Strategy strategy = Strategy::none;
  Configuration selected;
  // Empty when the chosen configuration was never evaluated.
  std::optional<double> est_accuracy;
  int evaluations_requested = 0;
  std::string notes;
};

}  // namespace kpsel
