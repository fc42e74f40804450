#include "kpsel/core.hpp"

#include <algorithm>
#include <array>
#include <utility>

namespace kpsel {

NotEvaluatedError::NotEvaluatedError(std::string problem_id, std::vector<std::string> missing)
    : Error([&] {
        std::string msg = "problem '" + problem_id + "': not evaluated:";
        for (const auto& key : missing) msg += " " + key;
        return msg;
      }()),
      problem_id_(std::move(problem_id)),
      missing_(std::move(missing)) {}

namespace {

constexpr std::array<std::pair<KpStatus, std::string_view>, 4> kStatusNames{{
    {KpStatus::raw, "raw"},
    {KpStatus::verified, "verified"},
    {KpStatus::needs_revision, "needs_revision"},
    {KpStatus::revised, "revised"},
}};

constexpr std::array<std::pair<Strategy, std::string_view>, 9> kStrategyNames{{
    {Strategy::none, "none"},
    {Strategy::all, "all"},
    {Strategy::random, "random"},
    {Strategy::max_score, "max_score"},
    {Strategy::s_loo, "s_loo"},
    {Strategy::t_loo, "t_loo"},
    {Strategy::css, "css"},
    {Strategy::cbrs, "cbrs"},
    {Strategy::exhaustive, "exhaustive"},
}};

}  // namespace

std::string_view to_string(KpStatus status) {
  for (const auto& [value, name] : kStatusNames) {
    if (value == status) return name;
  }
  return "raw";
}

KpStatus parse_kp_status(std::string_view text) {
  for (const auto& [value, name] : kStatusNames) {
    if (name == text) return value;
  }
  throw ValidationError("unknown KP status '" + std::string(text) + "'");
}

std::string_view to_string(Strategy strategy) {
  for (const auto& [value, name] : kStrategyNames) {
    if (value == strategy) return name;
  }
  return "none";
}

Strategy parse_strategy(std::string_view text) {
  std::string normalized(text);
  std::replace(normalized.begin(), normalized.end(), '-', '_');
  for (const auto& [value, name] : kStrategyNames) {
    if (name == normalized) return value;
  }
  throw ValidationError("unknown strategy '" + std::string(text) + "'");
}

Configuration Configuration::canonicalize(std::span<const int> indices, int n_kps) {
  std::vector<int> sorted(indices.begin(), indices.end());
  for (int index : sorted) {
    if (index < 0 || index >= n_kps) {
      throw ValidationError("KP index " + std::to_string(index) + " out of range [0, " +
                            std::to_string(n_kps) + ")");
    }
  }
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  return Configuration(std::move(sorted));
}

Configuration Configuration::full(int n_kps) {
  std::vector<int> all(static_cast<std::size_t>(std::max(n_kps, 0)));
  for (int i = 0; i < n_kps; ++i) all[static_cast<std::size_t>(i)] = i;
  return Configuration(std::move(all));
}

Configuration Configuration::without(int index) const {
  std::vector<int> kept;
  kept.reserve(indices_.size());
  for (int i : indices_) {
    if (i != index) kept.push_back(i);
  }
  return Configuration(std::move(kept));
}

Configuration Configuration::without(const Configuration& removed) const {
  std::vector<int> kept;
  std::set_difference(indices_.begin(), indices_.end(), removed.indices_.begin(),
                      removed.indices_.end(), std::back_inserter(kept));
  return Configuration(std::move(kept));
}

bool Configuration::contains(int index) const {
  return std::binary_search(indices_.begin(), indices_.end(), index);
}

std::string Configuration::key() const {
  std::string out = "[";
  for (std::size_t i = 0; i < indices_.size(); ++i) {
    if (i != 0) out += ',';
    out += std::to_string(indices_[i]);
  }
  out += ']';
  return out;
}

AccuracyTable::AccuracyTable(std::string problem_id, int n_kps, int runs, int samples_per_run)
    : problem_id_(std::move(problem_id)),
      n_kps_(n_kps),
      runs_(runs),
      samples_per_run_(samples_per_run) {
  if (n_kps < 0) throw ValidationError("n_kps must be non-negative");
  if (runs < 1 || samples_per_run < 1) {
    throw ValidationError("runs and samples_per_run must be at least 1");
  }
}

void AccuracyTable::validate_counts(const Configuration& config, const RunCounts& counts) const {
  if (!config.empty() && config.indices().back() >= n_kps_) {
    throw ValidationError("problem '" + problem_id_ + "': configuration " + config.key() +
                          " exceeds n_kps " + std::to_string(n_kps_));
  }
  if (counts.size() != static_cast<std::size_t>(runs_)) {
    throw IntegrityError("problem '" + problem_id_ + "' config " + config.key() + ": expected " +
                         std::to_string(runs_) + " run counts, got " +
                         std::to_string(counts.size()));
  }
  for (int c : counts) {
    if (c < 0 || c > samples_per_run_) {
      throw IntegrityError("problem '" + problem_id_ + "' config " + config.key() +
                           ": run count " + std::to_string(c) + " outside [0, " +
                           std::to_string(samples_per_run_) + "]");
    }
  }
}

void AccuracyTable::insert(const Configuration& config, RunCounts counts) {
  validate_counts(config, counts);
  auto [it, inserted] = cells_.try_emplace(config, counts);
  if (!inserted && it->second != counts) {
    throw ConflictError("problem '" + problem_id_ + "' config " + config.key() +
                        ": conflicting run counts for an existing cell");
  }
}

const RunCounts& AccuracyTable::counts(const Configuration& config) const {
  auto it = cells_.find(config);
  if (it == cells_.end()) throw NotEvaluatedError(problem_id_, {config.key()});
  return it->second;
}

std::int64_t AccuracyTable::correct(const Configuration& config) const {
  std::int64_t sum = 0;
  for (int c : counts(config)) sum += c;
  return sum;
}

double AccuracyTable::pooled_accuracy(const Configuration& config) const {
  return static_cast<double>(correct(config)) / static_cast<double>(total_samples());
}

double AccuracyTable::run_accuracy(const Configuration& config, int run) const {
  const auto& c = counts(config);
  if (run < 0 || run >= runs_) throw ValidationError("run index out of range");
  return static_cast<double>(c[static_cast<std::size_t>(run)]) / samples_per_run_;
}

double AccuracyTable::run_variance(const Configuration& config) const {
  const auto& c = counts(config);
  double mean = 0.0;
  for (int v : c) mean += static_cast<double>(v) / samples_per_run_;
  mean /= runs_;
  double var = 0.0;
  for (int v : c) {
    const double d = static_cast<double>(v) / samples_per_run_ - mean;
    var += d * d;
  }
  return var / runs_;
}

std::int64_t AccuracyTable::variance_key(const Configuration& config) const {
  std::int64_t sum = 0;
  std::int64_t sum_sq = 0;
  for (int v : counts(config)) {
    sum += v;
    sum_sq += static_cast<std::int64_t>(v) * v;
  }
  return runs_ * sum_sq - sum * sum;
}

}  // namespace kpsel
