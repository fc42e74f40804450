#include "kpsel/store.hpp"

#include <algorithm>

#include "kpsel/hash.hpp"

namespace kpsel {

RunCounts CacheOnlyProvider::evaluate(const EvaluationRequest& request) {
  throw NotEvaluatedError(request.problem_id, {request.config.key()});
}

int Dataset::n_kps(const std::string& problem_id) const {
  if (auto it = kps.find(problem_id); it != kps.end()) return static_cast<int>(it->second.size());
  if (auto it = tables.find(problem_id); it != tables.end()) return it->second.n_kps();
  return 0;
}

std::map<std::string, AccuracyTable> aggregate(std::span<const RolloutRecord> records, int runs,
                                               int samples_per_run,
                                               const std::map<std::string, int>& n_kps) {
  if (runs < 1 || samples_per_run < 1) {
    throw ValidationError("runs and samples_per_run must be at least 1");
  }
  // (problem, config) -> run -> sample -> outcome (-1 = absent).
  std::map<std::pair<std::string, Configuration>, std::vector<std::vector<signed char>>> grid;
  std::map<std::string, int> max_index;
  for (const auto& r : records) {
    const std::string where = "problem '" + r.problem_id + "' config " + r.config.key() +
                              " run " + std::to_string(r.run);
    if (r.run < 0 || r.run >= runs) throw IntegrityError(where + ": run index out of range");
    if (r.sample < 0 || r.sample >= samples_per_run) {
      throw IntegrityError(where + ": sample index " + std::to_string(r.sample) +
                           " out of range");
    }
    auto& cell = grid[{r.problem_id, r.config}];
    if (cell.empty()) {
      cell.assign(static_cast<std::size_t>(runs),
                  std::vector<signed char>(static_cast<std::size_t>(samples_per_run), -1));
    }
    auto& slot = cell[static_cast<std::size_t>(r.run)][static_cast<std::size_t>(r.sample)];
    if (slot != -1) {
      throw IntegrityError(where + ": duplicate record for sample " + std::to_string(r.sample));
    }
    slot = r.correct ? 1 : 0;
    int& m = max_index[r.problem_id];
    if (!r.config.empty()) m = std::max(m, r.config.indices().back() + 1);
  }

  std::map<std::string, AccuracyTable> tables;
  for (const auto& [key, cell] : grid) {
    const auto& [problem_id, config] = key;
    auto it = tables.find(problem_id);
    if (it == tables.end()) {
      auto nk = n_kps.find(problem_id);
      const int n = nk != n_kps.end() ? nk->second : max_index[problem_id];
      it = tables.emplace(problem_id, AccuracyTable(problem_id, n, runs, samples_per_run)).first;
    }
    RunCounts counts(static_cast<std::size_t>(runs), 0);
    for (int run = 0; run < runs; ++run) {
      for (signed char outcome : cell[static_cast<std::size_t>(run)]) {
        if (outcome == -1) {
          throw IntegrityError("problem '" + problem_id + "' config " + config.key() + " run " +
                               std::to_string(run) + ": incomplete run");
        }
        counts[static_cast<std::size_t>(run)] += outcome;
      }
    }
    it->second.insert(config, std::move(counts));
  }
  return tables;
}

json to_json(const Problem& problem) {
  json j;
  j["id"] = problem.id;
  j["statement"] = problem.statement;
  j["solution"] = problem.reference_solution ? json(*problem.reference_solution) : json(nullptr);
  j["answer"] = problem.gold_answer;
  return j;
}

json to_json(const KnowledgePoint& kp) {
  json j;
  j["problem_id"] = kp.problem_id;
  j["index"] = kp.index;
  j["knowledge"] = kp.knowledge;
  j["considerations"] = kp.considerations;
  j["status"] = std::string(to_string(kp.status));
  return j;
}

json to_json(const SelectionOutcome& outcome) {
  json j;
  j["problem_id"] = outcome.problem_id;
  j["strategy"] = std::string(to_string(outcome.strategy));
  j["selected"] = outcome.selected.indices();
  j["est_accuracy"] = outcome.est_accuracy ? json(*outcome.est_accuracy) : json(nullptr);
  j["evaluations_requested"] = outcome.evaluations_requested;
  if (!outcome.notes.empty()) j["notes"] = outcome.notes;
  return j;
}

json rollout_json(const std::string& problem_id, const Configuration& config,
                  const RunCounts& counts, int samples_per_run) {
  json j;
  j["problem_id"] = problem_id;
  j["config"] = config.indices();
  j["run_counts"] = counts;
  j["samples_per_run"] = samples_per_run;
  return j;
}

Configuration config_from_json(const json& value, int n_kps, std::size_t line) {
  if (!value.is_array()) {
    throw ParseError("line " + std::to_string(line) + ": config must be an index array", line);
  }
  std::vector<int> indices;
  for (const auto& v : value) {
    if (!v.is_number_integer()) {
      throw ParseError("line " + std::to_string(line) + ": config entries must be integers",
                       line);
    }
    indices.push_back(v.get<int>());
  }
  if (std::adjacent_find(indices.begin(), indices.end(), std::greater_equal<>()) !=
      indices.end()) {
    throw ParseError("line " + std::to_string(line) + ": config array is not canonical-sorted",
                     line);
  }
  try {
    return Configuration::canonicalize(indices, n_kps);
  } catch (const ValidationError& e) {
    throw ParseError("line " + std::to_string(line) + ": " + e.what(), line);
  }
}

Problem problem_from_json(const json& record, std::size_t line) {
  Problem p;
  p.id = require_string(record, "id", line);
  if (p.id.empty()) throw ParseError("line " + std::to_string(line) + ": empty id", line);
  p.statement = require_string(record, "statement", line);
  p.gold_answer = require_string(record, "answer", line);
  if (auto it = record.find("solution"); it != record.end() && !it->is_null()) {
    if (!it->is_string()) {
      throw ParseError("line " + std::to_string(line) + ": solution must be a string or null",
                       line);
    }
    p.reference_solution = it->get<std::string>();
  }
  return p;
}

KnowledgePoint kp_from_json(const json& record, std::size_t line) {
  KnowledgePoint kp;
  kp.problem_id = require_string(record, "problem_id", line);
  kp.index = static_cast<int>(require_int(record, "index", line));
  kp.knowledge = require_string(record, "knowledge", line);
  kp.considerations = require_string(record, "considerations", line);
  try {
    kp.status = parse_kp_status(require_string(record, "status", line));
  } catch (const ValidationError& e) {
    throw ParseError("line " + std::to_string(line) + ": " + e.what(), line);
  }
  return kp;
}

SelectionOutcome selection_from_json(const json& record, std::size_t line) {
  SelectionOutcome o;
  o.problem_id = require_string(record, "problem_id", line);
  try {
    o.strategy = parse_strategy(require_string(record, "strategy", line));
  } catch (const ValidationError& e) {
    throw ParseError("line " + std::to_string(line) + ": " + e.what(), line);
  }
  o.selected = config_from_json(require_field(record, "selected", line), 1 << 30, line);
  const json& acc = require_field(record, "est_accuracy", line);
  if (acc.is_number()) {
    o.est_accuracy = acc.get<double>();
  } else if (!acc.is_null()) {
    throw ParseError("line " + std::to_string(line) + ": est_accuracy must be a number or null",
                     line);
  }
  o.evaluations_requested = static_cast<int>(require_int(record, "evaluations_requested", line));
  if (auto it = record.find("notes"); it != record.end() && it->is_string()) {
    o.notes = it->get<std::string>();
  }
  return o;
}

std::vector<SelectionOutcome> read_selections(const std::filesystem::path& path) {
  std::vector<SelectionOutcome> out;
  std::set<std::string> seen;
  for_each_jsonl(path, [&](const json& record, std::size_t line) {
    auto o = selection_from_json(record, line);
    if (!seen.insert(o.problem_id).second) {
      throw ConflictError("line " + std::to_string(line) + ": duplicate selection for '" +
                          o.problem_id + "'");
    }
    out.push_back(std::move(o));
  });
  return out;
}

void write_problems(const std::filesystem::path& path, const Dataset& dataset) {
  JsonlWriter out(path);
  for (const auto& [id, problem] : dataset.problems) out.write(to_json(problem));
}

void write_kps(const std::filesystem::path& path, const Dataset& dataset) {
  JsonlWriter out(path);
  for (const auto& [id, kps] : dataset.kps) {
    for (const auto& kp : kps) out.write(to_json(kp));
  }
}

void write_rollouts(const std::filesystem::path& path, const Dataset& dataset) {
  JsonlWriter out(path);
  for (const auto& [id, table] : dataset.tables) {
    for (const auto& [config, counts] : table.cells()) {
      auto j = rollout_json(id, config, counts, table.samples_per_run());
      j["n_kps"] = table.n_kps();
      out.write(j);
    }
  }
}

RolloutStore::RolloutStore(int runs, int samples_per_run)
    : runs_(runs), samples_per_run_(samples_per_run) {
  if (runs < 1 || samples_per_run < 1) {
    throw ValidationError("runs and samples_per_run must be at least 1");
  }
}

bool RolloutStore::already_ingested(const std::string& kind, const std::string& content,
                                    std::size_t* count) {
  auto it = ingested_.find(hash_combine(fnv1a64(kind), content));
  if (it == ingested_.end()) return false;
  *count = it->second;
  return true;
}

void RolloutStore::remember_ingest(const std::string& kind, const std::string& content,
                                   std::size_t count) {
  ingested_[hash_combine(fnv1a64(kind), content)] = count;
}

std::size_t RolloutStore::ingest_problems(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  std::unique_lock lock(mutex_);
  std::size_t count = 0;
  if (already_ingested("problems", content, &count)) return count;

  std::vector<Problem> parsed;
  std::set<std::string> ids;
  for_each_jsonl_text(content, [&](const json& record, std::size_t line) {
    Problem p = problem_from_json(record, line);
    if (!ids.insert(p.id).second || data_.problems.count(p.id) != 0) {
      throw ConflictError("line " + std::to_string(line) + ": duplicate problem id '" + p.id +
                          "'");
    }
    parsed.push_back(std::move(p));
  });
  for (auto& p : parsed) data_.problems.emplace(p.id, std::move(p));
  remember_ingest("problems", content, parsed.size());
  return parsed.size();
}

std::size_t RolloutStore::ingest_kps(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  std::unique_lock lock(mutex_);
  std::size_t count = 0;
  if (already_ingested("kps", content, &count)) return count;

  std::map<std::string, std::vector<KnowledgePoint>> grouped;
  std::set<std::pair<std::string, int>> seen;
  for_each_jsonl_text(content, [&](const json& record, std::size_t line) {
    KnowledgePoint kp = kp_from_json(record, line);
    if (!seen.emplace(kp.problem_id, kp.index).second) {
      throw ConflictError("line " + std::to_string(line) + ": duplicate KP index " +
                          std::to_string(kp.index) + " for problem '" + kp.problem_id + "'");
    }
    grouped[kp.problem_id].push_back(std::move(kp));
    ++count;
  });
  for (auto& [id, kps] : grouped) {
    std::sort(kps.begin(), kps.end(),
              [](const auto& a, const auto& b) { return a.index < b.index; });
    for (std::size_t i = 0; i < kps.size(); ++i) {
      if (kps[i].index != static_cast<int>(i)) {
        throw ValidationError("problem '" + id + "': KP indices are not contiguous from 0");
      }
    }
    if (auto t = data_.tables.find(id);
        t != data_.tables.end() && t->second.n_kps() != static_cast<int>(kps.size())) {
      throw IntegrityError("problem '" + id + "': KP count disagrees with its accuracy table");
    }
  }
  for (auto& [id, kps] : grouped) data_.kps[id] = std::move(kps);
  remember_ingest("kps", content, count);
  return count;
}

std::size_t RolloutStore::ingest_rollouts(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  std::unique_lock lock(mutex_);
  std::size_t count = 0;
  if (already_ingested("rollouts", content, &count)) return count;

  struct Row {
    std::string problem_id;
    json config;
    RunCounts counts;
    int samples_per_run;
    std::size_t line;
  };
  std::vector<Row> rows;
  std::map<std::string, int> n_kps;
  for_each_jsonl_text(content, [&](const json& record, std::size_t line) {
    Row row;
    row.problem_id = require_string(record, "problem_id", line);
    row.config = require_field(record, "config", line);
    const json& counts = require_field(record, "run_counts", line);
    if (!counts.is_array() || counts.empty()) {
      throw ParseError("line " + std::to_string(line) + ": run_counts must be a non-empty array",
                       line);
    }
    for (const auto& c : counts) {
      if (!c.is_number_integer()) {
        throw ParseError("line " + std::to_string(line) + ": run_counts entries must be integers",
                         line);
      }
      row.counts.push_back(c.get<int>());
    }
    row.samples_per_run = static_cast<int>(require_int(record, "samples_per_run", line));
    row.line = line;
    int n = -1;
    if (auto k = data_.kps.find(row.problem_id); k != data_.kps.end()) {
      n = static_cast<int>(k->second.size());
    } else if (auto t = data_.tables.find(row.problem_id); t != data_.tables.end()) {
      n = t->second.n_kps();
    } else if (auto f = record.find("n_kps"); f != record.end() && f->is_number_integer()) {
      n = f->get<int>();
    } else {
      for (const auto& v : row.config) {
        if (v.is_number_integer()) n = std::max(n, v.get<int>() + 1);
      }
    }
    int& slot = n_kps[row.problem_id];
    slot = std::max({slot, n, 0});
    rows.push_back(std::move(row));
  });

  std::map<std::string, AccuracyTable> staged;
  for (const auto& row : rows) {
    auto it = staged.find(row.problem_id);
    if (it == staged.end()) {
      auto existing = data_.tables.find(row.problem_id);
      AccuracyTable base = existing != data_.tables.end()
                               ? existing->second
                               : AccuracyTable(row.problem_id, n_kps[row.problem_id],
                                               static_cast<int>(row.counts.size()),
                                               row.samples_per_run);
      it = staged.emplace(row.problem_id, std::move(base)).first;
    }
    AccuracyTable& table = it->second;
    if (table.runs() != static_cast<int>(row.counts.size()) ||
        table.samples_per_run() != row.samples_per_run) {
      throw IntegrityError("line " + std::to_string(row.line) + ": problem '" + row.problem_id +
                           "' mixes run/sample budgets");
    }
    table.insert(config_from_json(row.config, table.n_kps(), row.line), row.counts);
  }
  for (auto& [id, table] : staged) data_.tables[id] = std::move(table);
  remember_ingest("rollouts", content, rows.size());
  return rows.size();
}

std::size_t RolloutStore::ingest_raw_rollouts(const std::filesystem::path& path) {
  const std::string content = read_file(path);
  std::unique_lock lock(mutex_);
  std::size_t count = 0;
  if (already_ingested("raw", content, &count)) return count;

  std::vector<RolloutRecord> records;
  for_each_jsonl_text(content, [&](const json& record, std::size_t line) {
    RolloutRecord r;
    r.problem_id = require_string(record, "problem_id", line);
    r.config = config_from_json(require_field(record, "config", line), 1 << 30, line);
    r.run = static_cast<int>(require_int(record, "run", line));
    r.sample = static_cast<int>(require_int(record, "sample", line));
    const json& c = require_field(record, "correct", line);
    if (!c.is_boolean()) {
      throw ParseError("line " + std::to_string(line) + ": correct must be a boolean", line);
    }
    r.correct = c.get<bool>();
    records.push_back(std::move(r));
  });
  std::map<std::string, int> n_kps;
  for (const auto& [id, kps] : data_.kps) n_kps[id] = static_cast<int>(kps.size());
  for (const auto& [id, table] : data_.tables) n_kps.emplace(id, table.n_kps());
  auto tables = aggregate(records, runs_, samples_per_run_, n_kps);
  for (auto& [id, fresh] : tables) {
    auto existing = data_.tables.find(id);
    if (existing == data_.tables.end()) {
      data_.tables.emplace(id, std::move(fresh));
      continue;
    }
    AccuracyTable merged = existing->second;
    for (const auto& [config, counts] : fresh.cells()) merged.insert(config, counts);
    existing->second = std::move(merged);
  }
  remember_ingest("raw", content, records.size());
  return records.size();
}

void RolloutStore::add_problem(Problem problem) {
  std::unique_lock lock(mutex_);
  if (problem.id.empty()) throw ValidationError("problem id must be non-empty");
  if (!data_.problems.emplace(problem.id, problem).second) {
    throw ConflictError("duplicate problem id '" + problem.id + "'");
  }
}

void RolloutStore::set_kps(const std::string& problem_id, std::vector<KnowledgePoint> kps) {
  std::unique_lock lock(mutex_);
  for (std::size_t i = 0; i < kps.size(); ++i) {
    if (kps[i].index != static_cast<int>(i) || kps[i].problem_id != problem_id) {
      throw ValidationError("problem '" + problem_id + "': KP indices must be contiguous from 0");
    }
  }
  data_.kps[problem_id] = std::move(kps);
}

AccuracyTable& RolloutStore::table_for_locked(const std::string& problem_id, int runs,
                                              int samples_per_run) {
  auto it = data_.tables.find(problem_id);
  if (it != data_.tables.end()) return it->second;
  const bool known = data_.problems.count(problem_id) != 0 || data_.kps.count(problem_id) != 0;
  if (!known) throw ValidationError("unknown problem '" + problem_id + "'");
  return data_.tables
      .emplace(problem_id,
               AccuracyTable(problem_id, data_.n_kps(problem_id), runs, samples_per_run))
      .first->second;
}

void RolloutStore::insert_cell(const std::string& problem_id, const Configuration& config,
                               RunCounts counts) {
  std::unique_lock lock(mutex_);
  auto& table = table_for_locked(problem_id, static_cast<int>(counts.size()), samples_per_run_);
  table.insert(config, std::move(counts));
}

void RolloutStore::persist_to(std::filesystem::path rollouts_file) {
  std::unique_lock lock(mutex_);
  persist_path_ = std::move(rollouts_file);
}

RunCounts RolloutStore::fetch_or_request(const std::string& problem_id,
                                         const Configuration& config, Provider& provider) {
  EvaluationRequest request;
  {
    std::shared_lock lock(mutex_);
    auto it = data_.tables.find(problem_id);
    if (it != data_.tables.end()) {
      if (it->second.contains(config)) return it->second.counts(config);
      request = {problem_id, config, it->second.runs(), it->second.samples_per_run()};
    } else {
      if (data_.problems.count(problem_id) == 0 && data_.kps.count(problem_id) == 0) {
        throw ValidationError("unknown problem '" + problem_id + "'");
      }
      request = {problem_id, config, runs_, samples_per_run_};
    }
    const int n = it != data_.tables.end() ? it->second.n_kps() : data_.n_kps(problem_id);
    if (!config.empty() && config.indices().back() >= n) {
      throw ValidationError("problem '" + problem_id + "': configuration " + config.key() +
                            " exceeds n_kps " + std::to_string(n));
    }
  }

  std::promise<RunCounts> promise;
  std::shared_future<RunCounts> future;
  bool leader = false;
  {
    std::lock_guard flight(flight_mutex_);
    auto key = std::make_pair(problem_id, config);
    if (auto it = in_flight_.find(key); it != in_flight_.end()) {
      future = it->second;
    } else {
      // Re-check under the flight lock: a leader may have finished between
      // our table read and now.
      std::shared_lock lock(mutex_);
      auto t = data_.tables.find(problem_id);
      if (t != data_.tables.end() && t->second.contains(config)) return t->second.counts(config);
      future = promise.get_future().share();
      in_flight_.emplace(key, future);
      leader = true;
    }
  }
  if (!leader) return future.get();

  auto finish = [&] {
    std::lock_guard flight(flight_mutex_);
    in_flight_.erase({problem_id, config});
  };
  try {
    RunCounts counts;
    {
      std::lock_guard flight(flight_mutex_);
      ++invocations_[problem_id];
    }
    counts = provider.evaluate(request);
    {
      std::unique_lock lock(mutex_);
      auto& table = table_for_locked(problem_id, request.runs, request.samples_per_run);
      table.validate_counts(config, counts);
      if (persist_path_) {
        JsonlWriter out(*persist_path_, JsonlWriter::Mode::append);
        auto record = rollout_json(problem_id, config, counts, table.samples_per_run());
        record["n_kps"] = table.n_kps();
        out.write(record);
      }
      table.insert(config, counts);
    }
    promise.set_value(counts);
    finish();
    return counts;
  } catch (...) {
    promise.set_exception(std::current_exception());
    finish();
    throw;
  }
}

CellRequester RolloutStore::requester(const std::string& problem_id, Provider& provider) {
  return [this, problem_id, &provider](const Configuration& config) {
    return fetch_or_request(problem_id, config, provider);
  };
}

Dataset RolloutStore::snapshot() const {
  std::shared_lock lock(mutex_);
  return data_;
}

std::vector<std::string> RolloutStore::problem_ids() const {
  std::shared_lock lock(mutex_);
  std::set<std::string> ids;
  for (const auto& [id, p] : data_.problems) ids.insert(id);
  for (const auto& [id, t] : data_.tables) ids.insert(id);
  return {ids.begin(), ids.end()};
}

std::optional<Problem> RolloutStore::problem(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = data_.problems.find(id);
  if (it == data_.problems.end()) return std::nullopt;
  return it->second;
}

std::vector<KnowledgePoint> RolloutStore::kps(const std::string& problem_id) const {
  std::shared_lock lock(mutex_);
  auto it = data_.kps.find(problem_id);
  return it == data_.kps.end() ? std::vector<KnowledgePoint>{} : it->second;
}

std::optional<AccuracyTable> RolloutStore::table(const std::string& problem_id) const {
  std::shared_lock lock(mutex_);
  auto it = data_.tables.find(problem_id);
  if (it == data_.tables.end()) return std::nullopt;
  return it->second;
}

std::size_t RolloutStore::provider_invocations() const {
  std::lock_guard flight(flight_mutex_);
  std::size_t total = 0;
  for (const auto& [id, n] : invocations_) total += n;
  return total;
}

std::size_t RolloutStore::provider_invocations(const std::string& problem_id) const {
  std::lock_guard flight(flight_mutex_);
  auto it = invocations_.find(problem_id);
  return it == invocations_.end() ? 0 : it->second;
}

}  // namespace kpsel
