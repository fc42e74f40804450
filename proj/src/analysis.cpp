#include "kpsel/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <random>
#include <set>
#include <sstream>

#include "kpsel/hash.hpp"

namespace kpsel {

namespace {

void require(const AccuracyTable& table, const std::vector<Configuration>& configs) {
  std::vector<std::string> missing;
  for (const auto& c : configs) {
    if (!table.contains(c)) missing.push_back(c.key());
  }
  if (!missing.empty()) throw NotEvaluatedError(table.problem_id(), std::move(missing));
}

std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  std::uint64_t r = 1;
  for (int i = 1; i <= k; ++i) r = r * static_cast<std::uint64_t>(n - k + i) / i;
  return r;
}

void combinations(const std::vector<int>& pool, int m, std::size_t start, std::vector<int>& cur,
                  std::vector<std::vector<int>>& out) {
  if (static_cast<int>(cur.size()) == m) {
    out.push_back(cur);
    return;
  }
  for (std::size_t i = start; i < pool.size(); ++i) {
    cur.push_back(pool[i]);
    combinations(pool, m, i + 1, cur, out);
    cur.pop_back();
  }
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

std::string fixed(double v, int digits = 6) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string render_columns(const std::vector<std::vector<std::string>>& rows) {
  std::vector<std::size_t> width;
  for (const auto& row : rows) {
    if (width.size() < row.size()) width.resize(row.size(), 0);
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out += row[c];
      if (c + 1 < row.size()) out += std::string(width[c] - row[c].size() + 2, ' ');
    }
    out += '\n';
  }
  return out;
}

}  // namespace

std::vector<int> positive_contribution_set(const AccuracyTable& table) {
  const int n = table.n_kps();
  const Configuration full = Configuration::full(n);
  std::vector<Configuration> needed{Configuration{}, full};
  for (int i = 0; i < n; ++i) needed.push_back(full.without(i));
  require(table, needed);
  const std::int64_t bar = std::max(table.correct(full), table.correct(Configuration{}));
  std::vector<int> out;
  for (int i = 0; i < n; ++i) {
    if (table.correct(full.without(i)) >= bar) out.push_back(i);
  }
  return out;
}

json to_json(const ParadoxReport& r) {
  json details = json::array();
  for (const auto& d : r.details) {
    details.push_back({{"problem_id", d.problem_id},
                       {"subset", d.subset.indices()},
                       {"a_joint", d.a_joint},
                       {"a_single_mean", d.a_single_mean},
                       {"paradox", d.paradox}});
  }
  json problems = json::array();
  for (const auto& p : r.problems) {
    problems.push_back({{"problem_id", p.problem_id},
                        {"k_plus", p.k_plus},
                        {"available", p.available},
                        {"examined", p.examined},
                        {"paradoxes", p.paradoxes},
                        {"sampled", p.sampled}});
  }
  json failures = json::array();
  for (const auto& f : r.failures) {
    failures.push_back({{"problem_id", f.problem_id}, {"message", f.message}});
  }
  return json{{"m", r.m},
              {"subset_cap", r.subset_cap},
              {"pairs_examined", r.pairs_examined},
              {"paradox_pairs", r.paradox_pairs},
              {"p_m", r.p_m},
              {"delta_m", optional_json(r.delta_m)},
              {"p_m_per_problem", optional_json(r.p_m_per_problem)},
              {"per_problem", problems},
              {"details", details},
              {"failures", failures}};
}

ParadoxReport paradox_stats(const Dataset& dataset, const ParadoxOptions& options,
                            const RequesterFactory& requesters) {
  if (options.m < 2) throw ValidationError("m must be >= 2");
  if (options.subset_cap < 1) throw ValidationError("subset_cap must be >= 1");
  ParadoxReport report;
  report.m = options.m;
  report.subset_cap = options.subset_cap;
  double gap_sum = 0.0;
  double rate_sum = 0.0;
  std::size_t rated = 0;

  for (const auto& [id, stored] : dataset.tables) {
    try {
      AccuracyTable table = stored;
      const auto k_plus = positive_contribution_set(table);
      ParadoxProblem info;
      info.problem_id = id;
      info.k_plus = static_cast<int>(k_plus.size());
      info.available = binomial(info.k_plus, options.m);

      std::vector<std::vector<int>> subsets;
      std::vector<int> cur;
      combinations(k_plus, options.m, 0, cur, subsets);
      if (subsets.size() > static_cast<std::size_t>(options.subset_cap)) {
        std::vector<std::vector<int>> chosen;
        std::mt19937_64 rng(hash_combine(options.seed, id));
        std::sample(subsets.begin(), subsets.end(), std::back_inserter(chosen),
                    options.subset_cap, rng);
        subsets = std::move(chosen);
        info.sampled = true;
      }

      const Configuration full = Configuration::full(table.n_kps());
      const CellRequester request = requesters ? requesters(id) : CellRequester{};
      std::vector<ParadoxPair> pairs;
      for (const auto& members : subsets) {
        const Configuration subset = Configuration::canonicalize(members, table.n_kps());
        const Configuration joint = full.without(subset);
        if (!table.contains(joint)) {
          if (!request) throw NotEvaluatedError(id, {joint.key()});
          table.insert(joint, request(joint));
        }
        std::int64_t single_sum = 0;
        for (int i : members) single_sum += table.correct(full.without(i));
        const std::int64_t joint_count = table.correct(joint);
        ParadoxPair pair;
        pair.problem_id = id;
        pair.subset = subset;
        pair.a_joint = table.pooled_accuracy(joint);
        pair.a_single_mean = static_cast<double>(single_sum) /
                             static_cast<double>(options.m * table.total_samples());
        // Shared denominators make the strict comparison exact on counts.
        pair.paradox = options.m * joint_count < single_sum;
        pairs.push_back(std::move(pair));
      }

      info.examined = pairs.size();
      for (auto& pair : pairs) {
        if (pair.paradox) {
          ++info.paradoxes;
          gap_sum += pair.a_single_mean - pair.a_joint;
        }
        report.details.push_back(std::move(pair));
      }
      report.pairs_examined += info.examined;
      report.paradox_pairs += info.paradoxes;
      if (info.examined > 0) {
        rate_sum += static_cast<double>(info.paradoxes) / static_cast<double>(info.examined);
        ++rated;
      }
      report.problems.push_back(std::move(info));
    } catch (const Error& e) {
      report.failures.push_back({id, e.what()});
    }
  }

  if (report.pairs_examined > 0) {
    report.p_m = static_cast<double>(report.paradox_pairs) /
                 static_cast<double>(report.pairs_examined);
  }
  if (report.paradox_pairs > 0) {
    report.delta_m = gap_sum / static_cast<double>(report.paradox_pairs);
  }
  if (rated > 0) report.p_m_per_problem = rate_sum / static_cast<double>(rated);
  return report;
}

std::vector<double> default_bucket_edges(int bins) {
  if (bins < 1) throw ValidationError("bucket count must be >= 1");
  std::vector<double> edges;
  for (int i = 0; i <= bins; ++i) edges.push_back(static_cast<double>(i) / bins);
  return edges;
}

std::size_t bucket_index(const std::vector<double>& edges, double value) {
  const auto it = std::upper_bound(edges.begin(), edges.end(), value);
  const auto last = edges.size() - 2;
  if (it == edges.begin()) return 0;
  return std::min(static_cast<std::size_t>(it - edges.begin()) - 1, last);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ValidationError("percentile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

json to_json(const BucketReport& r) {
  json buckets = json::array();
  for (const auto& b : r.buckets) {
    json pct = nullptr;
    if (b.percentiles) {
      pct = json::object();
      for (std::size_t k = 0; k < kBucketPercentiles.size(); ++k) {
        pct["p" + std::to_string(static_cast<int>(kBucketPercentiles[k]))] = (*b.percentiles)[k];
      }
    }
    buckets.push_back({{"lo", b.lo},
                       {"hi", b.hi},
                       {"n", b.n},
                       {"mu_wo", optional_json(b.mu_wo)},
                       {"mu_with", optional_json(b.mu_with)},
                       {"percentiles", pct}});
  }
  json failures = json::array();
  for (const auto& f : r.failures) {
    failures.push_back({{"problem_id", f.problem_id}, {"message", f.message}});
  }
  return json{{"edges", r.edges}, {"buckets", buckets}, {"failures", failures}};
}

BucketReport difficulty_buckets(const Dataset& dataset,
                                const std::vector<SelectionOutcome>& hinted,
                                const std::vector<double>& edges) {
  if (edges.size() < 2 || edges.front() != 0.0 || edges.back() != 1.0) {
    throw ValidationError("bucket edges must run from 0 to 1");
  }
  for (std::size_t i = 1; i < edges.size(); ++i) {
    if (!(edges[i] > edges[i - 1])) throw ValidationError("bucket edges must increase strictly");
  }
  BucketReport report;
  report.edges = edges;
  std::vector<std::vector<double>> wo(edges.size() - 1);
  std::vector<std::vector<double>> with(edges.size() - 1);

  std::vector<const SelectionOutcome*> ordered;
  for (const auto& s : hinted) ordered.push_back(&s);
  std::sort(ordered.begin(), ordered.end(),
            [](const auto* a, const auto* b) { return a->problem_id < b->problem_id; });
  for (const auto* s : ordered) {
    auto t = dataset.tables.find(s->problem_id);
    if (t == dataset.tables.end()) {
      report.failures.push_back({s->problem_id, "no accuracy table"});
      continue;
    }
    const AccuracyTable& table = t->second;
    std::vector<std::string> missing;
    if (!table.contains(Configuration{})) missing.push_back(Configuration{}.key());
    if (!table.contains(s->selected)) missing.push_back(s->selected.key());
    if (!missing.empty()) {
      report.failures.push_back({s->problem_id, NotEvaluatedError(s->problem_id, missing).what()});
      continue;
    }
    const double a0 = table.pooled_accuracy(Configuration{});
    const std::size_t b = bucket_index(edges, a0);
    wo[b].push_back(a0);
    with[b].push_back(table.pooled_accuracy(s->selected));
  }

  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    BucketStats stats;
    stats.lo = edges[b];
    stats.hi = edges[b + 1];
    stats.n = wo[b].size();
    if (stats.n > 0) {
      auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return s / static_cast<double>(v.size());
      };
      stats.mu_wo = mean(wo[b]);
      stats.mu_with = mean(with[b]);
      std::array<double, 5> pct{};
      for (std::size_t k = 0; k < kBucketPercentiles.size(); ++k) {
        pct[k] = percentile(with[b], kBucketPercentiles[k]);
      }
      stats.percentiles = pct;
    }
    report.buckets.push_back(stats);
  }
  return report;
}

json to_json(const CountDistribution& d) {
  return json{{"mode", d.run ? "run" : "pooled"},
              {"run", d.run ? json(*d.run) : json(nullptr)},
              {"max_count", d.max_count},
              {"problems", d.problems},
              {"histogram", d.histogram},
              {"fractions", d.fractions}};
}

CountDistribution correct_count_distribution(
    const Dataset& dataset, const std::map<std::string, Configuration>& config_per_problem,
    std::optional<int> run) {
  CountDistribution out;
  out.run = run;
  std::optional<std::pair<int, int>> budget;
  std::vector<std::int64_t> values;
  for (const auto& [id, config] : config_per_problem) {
    auto t = dataset.tables.find(id);
    if (t == dataset.tables.end() || !t->second.contains(config)) {
      throw NotEvaluatedError(id, {config.key()});
    }
    const AccuracyTable& table = t->second;
    const std::pair<int, int> shape{table.runs(), table.samples_per_run()};
    if (budget && *budget != shape) {
      throw ValidationError("problems use different run/sample budgets");
    }
    budget = shape;
    if (run && (*run < 0 || *run >= table.runs())) {
      throw ValidationError("run " + std::to_string(*run) + " out of range");
    }
    values.push_back(run ? table.counts(config)[static_cast<std::size_t>(*run)]
                         : table.correct(config));
  }
  if (budget) out.max_count = run ? budget->second : budget->first * budget->second;
  out.problems = values.size();
  out.histogram.assign(static_cast<std::size_t>(out.max_count) + 1, 0);
  for (auto v : values) ++out.histogram[static_cast<std::size_t>(v)];
  for (auto h : out.histogram) {
    out.fractions.push_back(out.problems ? static_cast<double>(h) / out.problems : 0.0);
  }
  return out;
}

double strategy_jaccard(const std::vector<SelectionOutcome>& a,
                        const std::vector<SelectionOutcome>& b) {
  std::map<std::string, const Configuration*> left;
  std::map<std::string, const Configuration*> right;
  for (const auto& s : a) left[s.problem_id] = &s.selected;
  for (const auto& s : b) right[s.problem_id] = &s.selected;
  std::vector<std::string> mismatch;
  for (const auto& [id, _] : left) {
    if (!right.count(id)) mismatch.push_back(id);
  }
  for (const auto& [id, _] : right) {
    if (!left.count(id)) mismatch.push_back(id);
  }
  if (!mismatch.empty()) {
    std::sort(mismatch.begin(), mismatch.end());
    std::string list;
    for (const auto& id : mismatch) list += (list.empty() ? "" : ", ") + id;
    throw ValidationError("selection sets cover different problems: " + list);
  }
  if (left.empty()) return 1.0;
  double total = 0.0;
  for (const auto& [id, sa] : left) {
    const Configuration& sb = *right.at(id);
    std::vector<int> inter;
    std::vector<int> uni;
    std::set_intersection(sa->begin(), sa->end(), sb.begin(), sb.end(), std::back_inserter(inter));
    std::set_union(sa->begin(), sa->end(), sb.begin(), sb.end(), std::back_inserter(uni));
    total += uni.empty() ? 1.0 : static_cast<double>(inter.size()) / uni.size();
  }
  return total / static_cast<double>(left.size());
}

std::vector<PrefixPoint> prefix_sweep(const Problem& problem, const std::vector<double>& ratios,
                                      PromptEvaluator& evaluator, int runs, int samples_per_run) {
  if (!problem.reference_solution) {
    throw ValidationError("problem '" + problem.id + "' has no reference solution");
  }
  std::vector<PrefixPoint> points;
  for (double r : ratios) {
    if (!(r >= 0.0 && r <= 100.0)) throw ValidationError("prefix ratio must lie in [0, 100]");
    PrefixPoint point;
    point.ratio = r;
    point.hint_text = solution_prefix(*problem.reference_solution, r);
    point.tokens = whitespace_tokens(point.hint_text).size();
    const std::string prompt = emit_prompt(problem, prefix_hint_block(point.hint_text));
    point.counts = evaluator.evaluate_prompt(problem, prompt, runs, samples_per_run);
    std::int64_t correct = 0;
    for (int c : point.counts) correct += c;
    point.accuracy = static_cast<double>(correct) / (static_cast<double>(runs) * samples_per_run);
    points.push_back(std::move(point));
  }
  return points;
}

json to_json(const PrefixPoint& p) {
  return json{{"ratio", p.ratio},
              {"tokens", p.tokens},
              {"hint_text", p.hint_text},
              {"run_counts", p.counts},
              {"accuracy", p.accuracy}};
}

std::string prefix_columns(const std::vector<PrefixPoint>& points) {
  std::vector<std::vector<std::string>> rows{{"ratio", "tokens", "accuracy"}};
  for (const auto& p : points) {
    rows.push_back({fixed(p.ratio, 1), std::to_string(p.tokens), fixed(p.accuracy)});
  }
  return render_columns(rows);
}

std::string bucket_columns(const BucketReport& report) {
  std::vector<std::vector<std::string>> rows{
      {"lo", "hi", "n", "mu_wo", "mu_with", "p5", "p25", "p50", "p75", "p95"}};
  for (const auto& b : report.buckets) {
    std::vector<std::string> row{fixed(b.lo, 3), fixed(b.hi, 3), std::to_string(b.n)};
    row.push_back(b.mu_wo ? fixed(*b.mu_wo) : "NA");
    row.push_back(b.mu_with ? fixed(*b.mu_with) : "NA");
    for (std::size_t k = 0; k < kBucketPercentiles.size(); ++k) {
      row.push_back(b.percentiles ? fixed((*b.percentiles)[k]) : "NA");
    }
    rows.push_back(std::move(row));
  }
  return render_columns(rows);
}

std::string distribution_columns(const CountDistribution& d) {
  std::vector<std::vector<std::string>> rows{{"correct", "problems", "fraction"}};
  for (std::size_t c = 0; c < d.histogram.size(); ++c) {
    rows.push_back({std::to_string(c), std::to_string(d.histogram[c]), fixed(d.fractions[c])});
  }
  return render_columns(rows);
}

}  // namespace kpsel
