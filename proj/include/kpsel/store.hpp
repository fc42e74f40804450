#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "kpsel/core.hpp"
#include "kpsel/jsonl.hpp"

namespace kpsel {

struct RolloutRecord {
  std::string problem_id;
  Configuration config;
  int run = 0;
  int sample = 0;
  bool correct = false;
};

struct EvaluationRequest {
  std::string problem_id;
  Configuration config;
  int runs = 8;
  int samples_per_run = 32;
};

/// Source of per-run correct counts for configurations not yet in a table.
class Provider {
 public:
  virtual ~Provider() = default;
  virtual RunCounts evaluate(const EvaluationRequest& request) = 0;
};

/// Never generates; every request is a miss.
class CacheOnlyProvider final : public Provider {
 public:
  RunCounts evaluate(const EvaluationRequest& request) override;
};

/// Callback a selector uses to obtain counts for a configuration it needs but
/// whose cell is absent. Bound to one problem.
using CellRequester = std::function<RunCounts(const Configuration&)>;

struct Dataset {
  std::map<std::string, Problem> problems;
  std::map<std::string, std::vector<KnowledgePoint>> kps;
  std::map<std::string, AccuracyTable> tables;

  int n_kps(const std::string& problem_id) const;
};

/// Folds raw per-sample records into one table per problem. Every
/// (problem, config) must have all `samples_per_run` samples of all `runs`
/// runs; gaps and duplicates raise IntegrityError. `n_kps` supplies each
/// problem's KP count; problems missing from it use max index + 1.
std::map<std::string, AccuracyTable> aggregate(std::span<const RolloutRecord> records, int runs,
                                               int samples_per_run,
                                               const std::map<std::string, int>& n_kps = {});

// Record <-> JSON for the line-delimited file schemas.
json to_json(const Problem& problem);
json to_json(const KnowledgePoint& kp);
json to_json(const SelectionOutcome& outcome);
json rollout_json(const std::string& problem_id, const Configuration& config,
                  const RunCounts& counts, int samples_per_run);
Problem problem_from_json(const json& record, std::size_t line);
KnowledgePoint kp_from_json(const json& record, std::size_t line);
SelectionOutcome selection_from_json(const json& record, std::size_t line);
/// Parses a JSON index array into a configuration; the array must already be
/// sorted and duplicate-free.
Configuration config_from_json(const json& value, int n_kps, std::size_t line);

std::vector<SelectionOutcome> read_selections(const std::filesystem::path& path);

void write_problems(const std::filesystem::path& path, const Dataset& dataset);
void write_kps(const std::filesystem::path& path, const Dataset& dataset);
void write_rollouts(const std::filesystem::path& path, const Dataset& dataset);

/// Thread-safe owner of problems, KPs and accuracy tables.
///
/// Reads may run concurrently; writes are serialized. fetch_or_request
/// invokes the provider at most once per (problem, config) even under
/// concurrent callers, and writes the result through to the persistence file
/// (when set) before returning it.
class RolloutStore {
 public:
  explicit RolloutStore(int runs = 8, int samples_per_run = 32);

  int runs() const { return runs_; }
  int samples_per_run() const { return samples_per_run_; }

  // Each ingest returns the number of records in the file. Re-ingesting a
  // file with identical content is a no-op returning the same count.
  std::size_t ingest_problems(const std::filesystem::path& path);
  std::size_t ingest_kps(const std::filesystem::path& path);
  std::size_t ingest_rollouts(const std::filesystem::path& path);
  std::size_t ingest_raw_rollouts(const std::filesystem::path& path);

  void add_problem(Problem problem);
  void set_kps(const std::string& problem_id, std::vector<KnowledgePoint> kps);
  void insert_cell(const std::string& problem_id, const Configuration& config, RunCounts counts);

  /// Appends every newly generated cell to `rollouts_file`.
  void persist_to(std::filesystem::path rollouts_file);

  RunCounts fetch_or_request(const std::string& problem_id, const Configuration& config,
                             Provider& provider);
  CellRequester requester(const std::string& problem_id, Provider& provider);

  Dataset snapshot() const;
  std::vector<std::string> problem_ids() const;
  std::optional<Problem> problem(const std::string& id) const;
  std::vector<KnowledgePoint> kps(const std::string& problem_id) const;
  std::optional<AccuracyTable> table(const std::string& problem_id) const;

  std::size_t provider_invocations() const;
  std::size_t provider_invocations(const std::string& problem_id) const;

 private:
  AccuracyTable& table_for_locked(const std::string& problem_id, int runs, int samples_per_run);
  bool already_ingested(const std::string& kind, const std::string& content, std::size_t* count);
  void remember_ingest(const std::string& kind, const std::string& content, std::size_t count);

  int runs_;
  int samples_per_run_;
  mutable std::shared_mutex mutex_;
  Dataset data_;
  std::map<std::uint64_t, std::size_t> ingested_;
  std::optional<std::filesystem::path> persist_path_;

  mutable std::mutex flight_mutex_;
  std::map<std::pair<std::string, Configuration>, std::shared_future<RunCounts>> in_flight_;
  std::map<std::string, std::size_t> invocations_;
};

}  // namespace kpsel
