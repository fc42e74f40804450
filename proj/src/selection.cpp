#include "kpsel/selection.hpp"

#include <algorithm>
#include <atomic>
#include <limits>
#include <random>
#include <set>
#include <thread>

#include "kpsel/hash.hpp"

namespace kpsel {

namespace {

Configuration from_mask(std::uint64_t mask, int n_kps) {
  std::vector<int> indices;
  for (int i = 0; i < n_kps; ++i) {
    if (mask & (std::uint64_t{1} << i)) indices.push_back(i);
  }
  return Configuration::canonicalize(indices, n_kps);
}

// Copy of a table that pulls absent cells through a requester and counts the
// calls it makes.
class Workspace {
 public:
  Workspace(const AccuracyTable& table, const CellRequester& request)
      : table_(table), request_(request) {}

  void ensure(const std::vector<Configuration>& configs) {
    std::vector<Configuration> missing;
    for (const auto& c : configs) {
      if (!table_.contains(c)) missing.push_back(c);
    }
    if (missing.empty()) return;
    if (!request_) {
      std::vector<std::string> keys;
      for (const auto& c : missing) keys.push_back(c.key());
      throw NotEvaluatedError(table_.problem_id(), std::move(keys));
    }
    for (const auto& c : missing) {
      table_.insert(c, request_(c));
      ++requested_;
    }
  }

  // Evaluates `config` if a requester is available; returns whether the cell
  // is present afterwards.
  bool try_ensure(const Configuration& config) {
    if (table_.contains(config)) return true;
    if (!request_) return false;
    ensure({config});
    return true;
  }

  const AccuracyTable& table() const { return table_; }
  int requested() const { return requested_; }

 private:
  AccuracyTable table_;
  const CellRequester& request_;
  int requested_ = 0;
};

void require_cells(const AccuracyTable& table, const std::vector<Configuration>& configs) {
  std::vector<std::string> missing;
  for (const auto& c : configs) {
    if (!table.contains(c)) missing.push_back(c.key());
  }
  if (!missing.empty()) throw NotEvaluatedError(table.problem_id(), std::move(missing));
}

// Highest pooled accuracy; ties go to fewer KPs, then lexicographic order.
Configuration best_of(const AccuracyTable& table, const std::vector<Configuration>& candidates) {
  const Configuration* best = nullptr;
  std::int64_t best_correct = -1;
  for (const auto& c : candidates) {
    const std::int64_t v = table.correct(c);
    if (best == nullptr || v > best_correct ||
        (v == best_correct && preferred_on_tie(c, *best))) {
      best = &c;
      best_correct = v;
    }
  }
  return *best;
}

SelectionOutcome make_outcome(const AccuracyTable& table, Strategy strategy,
                              Configuration selected, int requested, std::string notes = {}) {
  SelectionOutcome out;
  out.problem_id = table.problem_id();
  out.strategy = strategy;
  if (table.contains(selected)) out.est_accuracy = table.pooled_accuracy(selected);
  out.selected = std::move(selected);
  out.evaluations_requested = requested;
  out.notes = std::move(notes);
  return out;
}

// Problems without KPs: every strategy returns the empty configuration.
SelectionOutcome degenerate(const AccuracyTable& table, Strategy strategy) {
  require_cells(table, {Configuration{}});
  return make_outcome(table, strategy, Configuration{}, 0);
}

}  // namespace

std::string_view to_string(TieBreakPath path) {
  switch (path) {
    case TieBreakPath::intersection:
      return "intersection";
    case TieBreakPath::vote:
      return "vote";
    case TieBreakPath::variance:
      return "variance";
    case TieBreakPath::cardinality:
      return "cardinality";
  }
  return "intersection";
}

json to_json(const ConsensusReport& report) {
  json j;
  json runs = json::array();
  for (const auto& set : report.per_run_near_optimal) {
    json run = json::array();
    for (const auto& c : set) run.push_back(c.indices());
    runs.push_back(std::move(run));
  }
  j["per_run_near_optimal"] = std::move(runs);
  json consensus = json::array();
  for (const auto& c : report.consensus) consensus.push_back(c.indices());
  j["consensus"] = std::move(consensus);
  j["delta"] = report.delta;
  j["winner"] = report.winner.indices();
  j["tie_break_path"] = std::string(to_string(report.tie_break_path));
  return j;
}

json to_json(const CssPartition& partition) {
  json j;
  j["h"] = partition.h;
  j["n"] = partition.n_set;
  j["c"] = partition.c;
  j["a_max"] = partition.a_max;
  return j;
}

std::vector<Configuration> loo_candidates(int n_kps) {
  std::set<Configuration> set{Configuration{}, Configuration::full(n_kps)};
  const Configuration all = Configuration::full(n_kps);
  for (int i = 0; i < n_kps; ++i) set.insert(all.without(i));
  return {set.begin(), set.end()};
}

SelectionOutcome select_none(const AccuracyTable& table) {
  return degenerate(table, Strategy::none);
}

SelectionOutcome select_all(const AccuracyTable& table) {
  const Configuration all = Configuration::full(table.n_kps());
  require_cells(table, {all});
  return make_outcome(table, Strategy::all, all, 0);
}

SelectionOutcome select_random(const AccuracyTable& table, std::uint64_t seed,
                               const CellRequester& request) {
  const int n = table.n_kps();
  if (n == 0) return degenerate(table, Strategy::random);
  std::mt19937_64 rng(hash_combine(seed, table.problem_id()));
  std::uniform_int_distribution<int> size_dist(2, 3);
  const int size = std::min(size_dist(rng), n);
  std::vector<int> pool(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) pool[static_cast<std::size_t>(i)] = i;
  std::vector<int> picked;
  std::sample(pool.begin(), pool.end(), std::back_inserter(picked), size, rng);
  Configuration chosen = Configuration::canonicalize(picked, n);

  Workspace ws(table, request);
  const bool evaluated = ws.try_ensure(chosen);
  return make_outcome(ws.table(), Strategy::random, std::move(chosen), ws.requested(),
                      evaluated ? "" : "unevaluated");
}

SelectionOutcome select_max_score(const AccuracyTable& table) {
  const int n = table.n_kps();
  if (n == 0) return degenerate(table, Strategy::max_score);
  auto candidates = loo_candidates(n);
  require_cells(table, candidates);
  return make_outcome(table, Strategy::max_score, best_of(table, candidates), 0);
}

SelectionOutcome select_phi(const AccuracyTable& table, const PhiParams& params,
                            const CellRequester& request) {
  if (params.epsilon < 0.0 || params.epsilon > 1.0) {
    throw ValidationError("epsilon must lie in [0, 1]");
  }
  const Strategy label = params.epsilon == 0.0 ? Strategy::s_loo : Strategy::t_loo;
  const int n = table.n_kps();
  if (n == 0) return degenerate(table, label);

  Workspace ws(table, request);
  ws.ensure(loo_candidates(n));
  const AccuracyTable& t = ws.table();
  const Configuration all = Configuration::full(n);

  // Compare on integer correct counts so equal accuracies stay equal.
  const double slack = params.epsilon * static_cast<double>(t.total_samples());
  const std::int64_t c_empty = t.correct(Configuration{});
  const std::int64_t c_all = t.correct(all);
  std::vector<std::int64_t> c_loo(static_cast<std::size_t>(n));
  std::int64_t c_max = std::numeric_limits<std::int64_t>::min();
  for (int i = 0; i < n; ++i) {
    c_loo[static_cast<std::size_t>(i)] = t.correct(all.without(i));
    c_max = std::max(c_max, c_loo[static_cast<std::size_t>(i)]);
  }

  Configuration chosen;
  std::string branch;
  if (c_empty >= c_all && static_cast<double>(c_empty - c_max) >= -slack) {
    branch = "empty";
  } else if (c_all > c_empty && static_cast<double>(c_all - c_max) > -slack) {
    chosen = all;
    branch = "all";
  } else {
    const std::int64_t floor = std::max(c_all, c_empty);
    std::vector<int> removed;
    for (int i = 0; i < n; ++i) {
      const double gap = static_cast<double>(c_loo[static_cast<std::size_t>(i)] - floor);
      const bool remove = params.strict_paper_formula ? gap < -slack : gap >= -slack;
      if (remove) removed.push_back(i);
    }
    chosen = all.without(Configuration::canonicalize(removed, n));
    branch = "prune";
  }
  const bool evaluated = ws.try_ensure(chosen);
  std::string notes = "branch=" + branch;
  if (!evaluated) notes += ";unevaluated";
  return make_outcome(ws.table(), label, std::move(chosen), ws.requested(), std::move(notes));
}

CssPartition css_partition(const AccuracyTable& table) {
  const int n = table.n_kps();
  CssPartition p;
  if (n == 0) return p;
  const Configuration all = Configuration::full(n);
  require_cells(table, loo_candidates(n));
  const std::int64_t floor = std::max(table.correct(all), table.correct(Configuration{}));
  std::int64_t c_max = std::numeric_limits<std::int64_t>::min();
  for (int i = 0; i < n; ++i) c_max = std::max(c_max, table.correct(all.without(i)));
  for (int i = 0; i < n; ++i) {
    const std::int64_t c = table.correct(all.without(i));
    if (c < floor) continue;
    p.h.push_back(i);
    if (c >= c_max) {
      p.n_set.push_back(i);
    } else {
      p.c.push_back(i);
    }
  }
  p.a_max = static_cast<double>(c_max) / static_cast<double>(table.total_samples());
  return p;
}

std::vector<Configuration> css_candidates(const CssPartition& partition, int n_kps, int cap) {
  const int free = static_cast<int>(partition.c.size());
  if (free > cap) {
    throw CapExceededError("CSS search space 2^" + std::to_string(free) +
                           " exceeds enumeration cap 2^" + std::to_string(cap));
  }
  const Configuration all = Configuration::full(n_kps);
  const Configuration base = all.without(Configuration::canonicalize(partition.n_set, n_kps));
  std::set<Configuration> out{Configuration{}, all};
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << free); ++mask) {
    std::vector<int> dropped;
    for (int b = 0; b < free; ++b) {
      if (mask & (std::uint64_t{1} << b)) dropped.push_back(partition.c[static_cast<std::size_t>(b)]);
    }
    out.insert(base.without(Configuration::canonicalize(dropped, n_kps)));
  }
  return {out.begin(), out.end()};
}

SelectionOutcome select_css(const AccuracyTable& table, const CellRequester& request,
                            const CssOptions& options) {
  const int n = table.n_kps();
  if (n == 0) return degenerate(table, Strategy::css);
  Workspace ws(table, request);
  ws.ensure(loo_candidates(n));
  const CssPartition partition = css_partition(ws.table());
  const auto candidates = css_candidates(partition, n, options.enumeration_cap);
  ws.ensure(candidates);
  json notes;
  notes["partition"] = to_json(partition);
  notes["candidates"] = candidates.size();
  return make_outcome(ws.table(), Strategy::css, best_of(ws.table(), candidates), ws.requested(),
                      notes.dump());
}

ConsensusReport cbrs_consensus(const AccuracyTable& table, double delta) {
  if (delta < 0.0 || delta > 1.0) throw ValidationError("delta must lie in [0, 1]");
  ConsensusReport report;
  report.delta = delta;
  const int n = table.n_kps();
  if (n == 0) {
    require_cells(table, {Configuration{}});
    report.per_run_near_optimal.assign(static_cast<std::size_t>(table.runs()), {Configuration{}});
    report.consensus = {Configuration{}};
    return report;
  }
  const auto candidates = loo_candidates(n);
  require_cells(table, candidates);
  const double slack = delta * table.samples_per_run();

  std::map<Configuration, int> votes;
  for (int run = 0; run < table.runs(); ++run) {
    int best = 0;
    for (const auto& c : candidates) {
      best = std::max(best, table.counts(c)[static_cast<std::size_t>(run)]);
    }
    std::vector<Configuration> near;
    for (const auto& c : candidates) {
      if (static_cast<double>(table.counts(c)[static_cast<std::size_t>(run)] - best) >= -slack) {
        near.push_back(c);
        ++votes[c];
      }
    }
    report.per_run_near_optimal.push_back(std::move(near));
  }

  for (const auto& [c, v] : votes) {
    if (v == table.runs()) report.consensus.push_back(c);
  }
  report.tie_break_path = TieBreakPath::intersection;
  if (report.consensus.empty()) {
    int most = 0;
    for (const auto& [c, v] : votes) most = std::max(most, v);
    for (const auto& [c, v] : votes) {
      if (v == most) report.consensus.push_back(c);
    }
    report.tie_break_path = TieBreakPath::vote;
  }

  std::vector<Configuration> remaining = report.consensus;
  if (remaining.size() > 1) {
    std::int64_t least = std::numeric_limits<std::int64_t>::max();
    for (const auto& c : remaining) least = std::min(least, table.variance_key(c));
    std::erase_if(remaining, [&](const Configuration& c) { return table.variance_key(c) != least; });
    report.tie_break_path =
        remaining.size() == 1 ? TieBreakPath::variance : TieBreakPath::cardinality;
  }
  report.winner = *std::min_element(remaining.begin(), remaining.end(), preferred_on_tie);
  return report;
}

SelectionOutcome select_cbrs(const AccuracyTable& table, double delta) {
  ConsensusReport report = cbrs_consensus(table, delta);
  return make_outcome(table, Strategy::cbrs, report.winner, 0, to_json(report).dump());
}

SelectionOutcome select_exhaustive(const AccuracyTable& table, const CellRequester& request,
                                   int cap) {
  const int n = table.n_kps();
  if (n > cap) {
    throw CapExceededError("exhaustive search over " + std::to_string(n) +
                           " KPs exceeds cap " + std::to_string(cap));
  }
  if (n == 0) return degenerate(table, Strategy::exhaustive);
  std::vector<Configuration> subsets;
  subsets.reserve(std::size_t{1} << n);
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask) {
    subsets.push_back(from_mask(mask, n));
  }
  Workspace ws(table, request);
  ws.ensure(subsets);
  return make_outcome(ws.table(), Strategy::exhaustive, best_of(ws.table(), subsets),
                      ws.requested());
}

SelectionOutcome select(const AccuracyTable& table, const SelectionParams& params,
                        const CellRequester& request) {
  switch (params.strategy) {
    case Strategy::none:
      return select_none(table);
    case Strategy::all:
      return select_all(table);
    case Strategy::random:
      return select_random(table, params.seed, request);
    case Strategy::max_score:
      return select_max_score(table);
    case Strategy::s_loo:
      return select_phi(table, {0.0, params.strict_paper_formula}, request);
    case Strategy::t_loo:
      return select_phi(table, {params.epsilon, params.strict_paper_formula}, request);
    case Strategy::css:
      return select_css(table, request, {params.css_cap});
    case Strategy::cbrs:
      return select_cbrs(table, params.delta);
    case Strategy::exhaustive:
      return select_exhaustive(table, request, params.exhaustive_cap);
  }
  throw ValidationError("unknown strategy");
}

json to_json(const BatchSummary& summary) {
  json j;
  j["strategy"] = std::string(to_string(summary.strategy));
  j["problem_count"] = summary.problem_count;
  j["failures"] = summary.failures;
  j["avg_kp"] = summary.avg_kp;
  j["avg_accuracy"] = summary.avg_accuracy ? json(*summary.avg_accuracy) : json(nullptr);
  j["evaluations"] = summary.evaluations;
  return j;
}

BatchResult batch_select(const Dataset& dataset, const SelectionParams& params,
                         const RequesterFactory& requesters) {
  std::set<std::string> id_set;
  for (const auto& [id, t] : dataset.tables) id_set.insert(id);
  for (const auto& [id, p] : dataset.problems) id_set.insert(id);
  const std::vector<std::string> ids(id_set.begin(), id_set.end());

  std::vector<std::optional<SelectionOutcome>> outcomes(ids.size());
  std::vector<std::string> errors(ids.size());

  auto work = [&](std::size_t slot) {
    const std::string& id = ids[slot];
    try {
      auto t = dataset.tables.find(id);
      if (t == dataset.tables.end()) {
        throw NotEvaluatedError(id, {"[]"});
      }
      if (auto k = dataset.kps.find(id); k != dataset.kps.end()) {
        for (const auto& kp : k->second) {
          if (!is_final(kp.status)) {
            throw ValidationError("problem '" + id + "': KP " + std::to_string(kp.index) +
                                  " has status " + std::string(to_string(kp.status)));
          }
        }
      }
      CellRequester request = requesters ? requesters(id) : CellRequester{};
      outcomes[slot] = select(t->second, params, request);
    } catch (const Error& e) {
      errors[slot] = e.what();
    }
  };

  const int workers = std::max(1, std::min<int>(params.parallelism, static_cast<int>(ids.size())));
  if (workers <= 1) {
    for (std::size_t i = 0; i < ids.size(); ++i) work(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < ids.size(); i = next++) work(i);
      });
    }
  }

  BatchResult result;
  result.summary.strategy = params.strategy;
  double kp_sum = 0.0;
  double acc_sum = 0.0;
  std::size_t acc_n = 0;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (!outcomes[i]) {
      result.failures.push_back({ids[i], errors[i]});
      continue;
    }
    const auto& o = *outcomes[i];
    kp_sum += static_cast<double>(o.selected.size());
    if (o.est_accuracy) {
      acc_sum += *o.est_accuracy;
      ++acc_n;
    }
    result.summary.evaluations += o.evaluations_requested;
    result.outcomes.push_back(o);
  }
  result.summary.problem_count = result.outcomes.size();
  result.summary.failures = result.failures.size();
  if (!result.outcomes.empty()) {
    result.summary.avg_kp = kp_sum / static_cast<double>(result.outcomes.size());
  }
  if (acc_n > 0) result.summary.avg_accuracy = acc_sum / static_cast<double>(acc_n);
  return result;
}

}  // namespace kpsel
