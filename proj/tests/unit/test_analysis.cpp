#include <gtest/gtest.h>

#include <numeric>
#include <random>

#include "kpsel/analysis.hpp"
#include "kpsel/synth.hpp"
#include "tables.hpp"

namespace kpsel {
namespace {

using testing::percent_table;

SelectionOutcome pick(std::string id, std::vector<int> selected, int n) {
  SelectionOutcome o;
  o.problem_id = std::move(id);
  o.selected = Configuration::canonicalize(selected, n);
  return o;
}

// Every subset of a synthetic world, exact probabilities.
AccuracyTable exact_full_table(const SyntheticWorld& w, int spr = 1 << 20) {
  AccuracyTable t(w.problem_id, w.n_kps, 1, spr);
  for (std::uint32_t mask = 0; mask < (1u << w.n_kps); ++mask) {
    std::vector<int> members;
    for (int i = 0; i < w.n_kps; ++i) {
      if (mask & (1u << i)) members.push_back(i);
    }
    const auto c = Configuration::canonicalize(members, w.n_kps);
    t.insert(c, sample_rollouts(w, c, 1, spr, SampleMode::exact));
  }
  return t;
}

TEST(PositiveContributionSet, Examples) {
  // A_K = 0.5, A_0 = 0.3, A_-0 = 0.6, A_-1 = 0.4.
  const auto t = percent_table(2, {{{}, 30}, {{0, 1}, 50}, {{1}, 60}, {{0}, 40}});
  EXPECT_EQ(positive_contribution_set(t), (std::vector<int>{0}));

  const auto none = percent_table(2, {{{}, 30}, {{0, 1}, 50}, {{1}, 45}, {{0}, 20}});
  EXPECT_TRUE(positive_contribution_set(none).empty());

  // Equality with the maximum is inclusive.
  const auto boundary = percent_table(2, {{{}, 30}, {{0, 1}, 50}, {{1}, 50}, {{0}, 49}});
  EXPECT_EQ(positive_contribution_set(boundary), (std::vector<int>{0}));
}

TEST(PositiveContributionSet, MissingCellsAreNamed) {
  const auto t = percent_table(2, {{{}, 30}, {{0, 1}, 50}});
  try {
    positive_contribution_set(t);
    FAIL() << "expected NotEvaluatedError";
  } catch (const NotEvaluatedError& e) {
    EXPECT_EQ(e.missing(), (std::vector<std::string>{"[1]", "[0]"}));
  }
}

Dataset single_table_dataset(AccuracyTable t) {
  Dataset d;
  const std::string id = t.problem_id();
  d.tables.emplace(id, std::move(t));
  return d;
}

TEST(Paradox, PairCountsWithGap) {
  // K = {0,1,2}: A_K = 0.5, A_-0 = A_-1 = 0.6, A_-2 = 0.3, A_0 = 0.3, A({2}) = 0.4.
  const auto t = percent_table(
      3, {{{}, 30}, {{0, 1, 2}, 50}, {{1, 2}, 60}, {{0, 2}, 60}, {{0, 1}, 30}, {{2}, 40}});
  const auto report = paradox_stats(single_table_dataset(t), {});
  ASSERT_EQ(report.pairs_examined, 1u);
  EXPECT_EQ(report.paradox_pairs, 1u);
  EXPECT_DOUBLE_EQ(report.p_m, 1.0);
  ASSERT_TRUE(report.delta_m);
  EXPECT_NEAR(*report.delta_m, 0.2, 1e-12);
  ASSERT_EQ(report.details.size(), 1u);
  EXPECT_EQ(report.details[0].subset.indices(), (std::vector<int>{0, 1}));
  EXPECT_DOUBLE_EQ(report.details[0].a_joint, 0.4);
  EXPECT_DOUBLE_EQ(report.details[0].a_single_mean, 0.6);
  EXPECT_EQ(report.problems[0].k_plus, 2);
  EXPECT_EQ(report.problems[0].available, 1u);
}

TEST(Paradox, EqualValuesAreNotCounted) {
  const auto t = percent_table(
      3, {{{}, 30}, {{0, 1, 2}, 50}, {{1, 2}, 60}, {{0, 2}, 60}, {{0, 1}, 30}, {{2}, 60}});
  const auto report = paradox_stats(single_table_dataset(t), {});
  EXPECT_EQ(report.pairs_examined, 1u);
  EXPECT_EQ(report.paradox_pairs, 0u);
  EXPECT_DOUBLE_EQ(report.p_m, 0.0);
  EXPECT_FALSE(report.delta_m);
  EXPECT_EQ(to_json(report).at("delta_m"), nullptr);
}

TEST(Paradox, SmallPositiveSetContributesNoPairs) {
  const auto t = percent_table(2, {{{}, 30}, {{0, 1}, 50}, {{1}, 60}, {{0}, 40}});
  const auto report = paradox_stats(single_table_dataset(t), {});
  EXPECT_EQ(report.pairs_examined, 0u);
  EXPECT_TRUE(report.failures.empty());
  ASSERT_EQ(report.problems.size(), 1u);
  EXPECT_EQ(report.problems[0].examined, 0u);
  EXPECT_FALSE(report.p_m_per_problem);
  EXPECT_THROW(paradox_stats(single_table_dataset(t), {1, 64, 0}), ValidationError);
}

TEST(Paradox, PlantedNegativeInteraction) {
  SyntheticWorld w;
  w.problem_id = "planted";
  w.n_kps = 2;
  w.base = 0.0;
  w.main_effects = {1.0, 1.0};
  w.pair_effects = {{{0, 1}, -3.0}};
  const auto report = paradox_stats(single_table_dataset(exact_full_table(w)), {});
  EXPECT_EQ(report.pairs_examined, 1u);
  EXPECT_DOUBLE_EQ(report.p_m, 1.0);
  // Gap: sigmoid(1) - sigmoid(0).
  EXPECT_NEAR(*report.delta_m, 1.0 / (1.0 + std::exp(-1.0)) - 0.5, 1e-6);
}

TEST(Paradox, RequestsMissingJointCells) {
  const auto t = percent_table(3, {{{}, 30}, {{0, 1, 2}, 50}, {{1, 2}, 60}, {{0, 2}, 60}, {{0, 1}, 30}});
  const auto dataset = single_table_dataset(t);
  const auto without = paradox_stats(dataset, {});
  EXPECT_EQ(without.failures.size(), 1u);
  std::vector<std::string> asked;
  const auto with = paradox_stats(dataset, {}, [&](const std::string&) {
    return [&](const Configuration& c) {
      asked.push_back(c.key());
      return RunCounts{40};
    };
  });
  EXPECT_TRUE(with.failures.empty());
  EXPECT_EQ(asked, (std::vector<std::string>{"[2]"}));
  EXPECT_EQ(with.paradox_pairs, 1u);
}

// Table where every KP is in K+ and joint cells are drawn from `rng`.
AccuracyTable wide_table(const std::string& id, int n, std::mt19937& rng) {
  AccuracyTable t(id, n, 1, 100);
  t.insert(Configuration{}, RunCounts{10});
  const auto full = Configuration::full(n);
  t.insert(full, RunCounts{20});
  for (int i = 0; i < n; ++i) t.insert(full.without(i), RunCounts{30 + static_cast<int>(rng() % 50)});
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const auto joint = full.without(Configuration::canonicalize({i, j}, n));
      if (!t.contains(joint)) t.insert(joint, RunCounts{static_cast<int>(rng() % 101)});
    }
  }
  return t;
}

TEST(Paradox, RatesStayInRangeAndGapsArePositive) {
  std::mt19937 rng(21);
  Dataset d;
  for (int p = 0; p < 40; ++p) {
    const std::string id = "q" + std::to_string(p);
    d.tables.emplace(id, wide_table(id, 2 + p % 5, rng));
  }
  const auto r = paradox_stats(d, {});
  EXPECT_GE(r.p_m, 0.0);
  EXPECT_LE(r.p_m, 1.0);
  std::size_t counted = 0;
  double gap = 0.0;
  for (const auto& pair : r.details) {
    EXPECT_EQ(pair.paradox, pair.a_joint < pair.a_single_mean);
    if (pair.paradox) {
      ++counted;
      gap += pair.a_single_mean - pair.a_joint;
    }
  }
  EXPECT_EQ(counted, r.paradox_pairs);
  ASSERT_TRUE(r.delta_m);
  EXPECT_GT(*r.delta_m, 0.0);
  EXPECT_NEAR(*r.delta_m, gap / counted, 1e-12);
  EXPECT_NEAR(r.p_m, static_cast<double>(counted) / r.details.size(), 1e-12);
  ASSERT_TRUE(r.p_m_per_problem);
  EXPECT_GE(*r.p_m_per_problem, 0.0);
  EXPECT_LE(*r.p_m_per_problem, 1.0);
}

TEST(Paradox, SubsetCapSamplesDeterministically) {
  std::mt19937 rng(4);
  Dataset d;
  d.tables.emplace("wide", wide_table("wide", 12, rng));
  const auto capped = paradox_stats(d, {2, 10, 3});
  ASSERT_EQ(capped.problems.size(), 1u);
  EXPECT_EQ(capped.problems[0].available, 66u);
  EXPECT_EQ(capped.problems[0].examined, 10u);
  EXPECT_TRUE(capped.problems[0].sampled);
  const auto again = paradox_stats(d, {2, 10, 3});
  ASSERT_EQ(again.details.size(), capped.details.size());
  for (std::size_t i = 0; i < again.details.size(); ++i) {
    EXPECT_EQ(again.details[i].subset, capped.details[i].subset);
  }
  const auto full = paradox_stats(d, {2, 64, 3});
  EXPECT_EQ(full.problems[0].examined, 64u);
  EXPECT_EQ(paradox_stats(d, {2, 100, 3}).problems[0].examined, 66u);
  EXPECT_FALSE(paradox_stats(d, {2, 100, 3}).problems[0].sampled);
}

// Dataset of problems "b<i>" with (A_0 %, hinted %) and a selection of {0}.
std::pair<Dataset, std::vector<SelectionOutcome>> bucket_fixture(
    const std::vector<std::pair<int, int>>& percents) {
  Dataset d;
  std::vector<SelectionOutcome> sel;
  for (std::size_t i = 0; i < percents.size(); ++i) {
    const std::string id = "b" + std::to_string(i);
    d.tables.emplace(id, percent_table(1, {{{}, percents[i].first}, {{0}, percents[i].second}}, id));
    sel.push_back(pick(id, {0}, 1));
  }
  return {std::move(d), std::move(sel)};
}

TEST(BucketIndex, RightOpenExceptLast) {
  const std::vector<double> edges{0.0, 0.5, 1.0};
  EXPECT_EQ(bucket_index(edges, 0.0), 0u);
  EXPECT_EQ(bucket_index(edges, 0.4999), 0u);
  EXPECT_EQ(bucket_index(edges, 0.5), 1u);
  EXPECT_EQ(bucket_index(edges, 1.0), 1u);
  EXPECT_EQ(default_bucket_edges().size(), 11u);
  EXPECT_DOUBLE_EQ(default_bucket_edges()[3], 0.3);
}

TEST(Buckets, AllZeroLandInFirstBucket) {
  const auto [d, sel] = bucket_fixture({{0, 10}, {0, 30}, {0, 50}});
  const auto r = difficulty_buckets(d, sel, default_bucket_edges());
  ASSERT_EQ(r.buckets.size(), 10u);
  EXPECT_EQ(r.buckets[0].n, 3u);
  EXPECT_DOUBLE_EQ(*r.buckets[0].mu_wo, 0.0);
  EXPECT_NEAR(*r.buckets[0].mu_with, 0.3, 1e-12);
  for (std::size_t b = 1; b < r.buckets.size(); ++b) {
    EXPECT_EQ(r.buckets[b].n, 0u);
    EXPECT_FALSE(r.buckets[b].mu_wo);
    EXPECT_FALSE(r.buckets[b].percentiles);
  }
  EXPECT_EQ(to_json(r).at("buckets")[4].at("mu_with"), nullptr);
}

TEST(Buckets, OnePerBucket) {
  const auto [d, sel] = bucket_fixture({{25, 40}, {75, 80}});
  const auto r = difficulty_buckets(d, sel, {0.0, 0.5, 1.0});
  ASSERT_EQ(r.buckets.size(), 2u);
  EXPECT_EQ(r.buckets[0].n, 1u);
  EXPECT_EQ(r.buckets[1].n, 1u);
  EXPECT_DOUBLE_EQ(*r.buckets[0].mu_wo, 0.25);
  EXPECT_DOUBLE_EQ(*r.buckets[1].mu_with, 0.8);
}

TEST(Buckets, HandAggregatedFixture) {
  const auto [d, sel] = bucket_fixture({{0, 20},
                                        {5, 40},
                                        {10, 30},
                                        {15, 50},
                                        {50, 70},
                                        {55, 90},
                                        {95, 100},
                                        {100, 100},
                                        {100, 90},
                                        {30, 60}});
  const auto r = difficulty_buckets(d, sel, default_bucket_edges());
  const std::vector<std::size_t> n{2, 2, 0, 1, 0, 2, 0, 0, 0, 3};
  for (std::size_t b = 0; b < n.size(); ++b) EXPECT_EQ(r.buckets[b].n, n[b]) << b;
  EXPECT_NEAR(*r.buckets[0].mu_wo, 0.025, 1e-12);
  EXPECT_NEAR(*r.buckets[0].mu_with, 0.30, 1e-12);
  EXPECT_NEAR(*r.buckets[1].mu_wo, 0.125, 1e-12);
  EXPECT_NEAR(*r.buckets[1].mu_with, 0.40, 1e-12);
  EXPECT_NEAR(*r.buckets[3].mu_with, 0.60, 1e-12);
  EXPECT_NEAR(*r.buckets[5].mu_wo, 0.525, 1e-12);
  EXPECT_NEAR(*r.buckets[5].mu_with, 0.80, 1e-12);
  EXPECT_NEAR(*r.buckets[9].mu_wo, 2.95 / 3, 1e-12);
  EXPECT_NEAR(*r.buckets[9].mu_with, 2.9 / 3, 1e-12);
  // Hinted values {0.9, 1, 1}: p5 = 0.91, p25 = 0.95, p50 = p75 = p95 = 1.
  const auto& pct = *r.buckets[9].percentiles;
  EXPECT_NEAR(pct[0], 0.91, 1e-12);
  EXPECT_NEAR(pct[1], 0.95, 1e-12);
  EXPECT_NEAR(pct[2], 1.0, 1e-12);
  EXPECT_NEAR(pct[4], 1.0, 1e-12);
  EXPECT_NE(bucket_columns(r).find("NA"), std::string::npos);
}

TEST(Buckets, AssignmentIsTotalAndExclusive) {
  std::mt19937 rng(13);
  std::vector<std::pair<int, int>> percents;
  for (int i = 0; i < 300; ++i) {
    percents.emplace_back(static_cast<int>(rng() % 101), static_cast<int>(rng() % 101));
  }
  const auto [d, sel] = bucket_fixture(percents);
  for (const auto& edges : {default_bucket_edges(), default_bucket_edges(3),
                            std::vector<double>{0.0, 0.05, 0.5, 0.95, 1.0}}) {
    const auto r = difficulty_buckets(d, sel, edges);
    std::size_t total = 0;
    for (const auto& b : r.buckets) total += b.n;
    EXPECT_EQ(total, 300u);
  }
}

TEST(Buckets, ValidationAndFailures) {
  const auto [d, sel] = bucket_fixture({{10, 20}});
  EXPECT_THROW(difficulty_buckets(d, sel, {0.0, 0.5}), ValidationError);
  EXPECT_THROW(difficulty_buckets(d, sel, {0.0, 0.5, 0.5, 1.0}), ValidationError);
  auto extra = sel;
  extra.push_back(pick("ghost", {}, 0));
  extra.push_back(pick("b0", {}, 1));  // [] evaluated, counted again
  const auto r = difficulty_buckets(d, extra, {0.0, 1.0});
  ASSERT_EQ(r.failures.size(), 1u);
  EXPECT_EQ(r.failures[0].problem_id, "ghost");
  EXPECT_EQ(r.buckets[0].n, 2u);
}

TEST(Percentile, LinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile({3, 1, 2}, 50), 2.0);
  EXPECT_DOUBLE_EQ(percentile({0, 10}, 25), 2.5);
  EXPECT_DOUBLE_EQ(percentile({7}, 95), 7.0);
  EXPECT_THROW(percentile({}, 50), ValidationError);
}

// Problems "d<i>" with run-0 counts from `run0`; run 1 holds `other`.
Dataset distribution_fixture(const std::vector<int>& run0, int other = 8) {
  Dataset d;
  for (std::size_t i = 0; i < run0.size(); ++i) {
    const std::string id = "d" + std::to_string(i);
    AccuracyTable t(id, 0, 2, 8);
    t.insert(Configuration{}, RunCounts{run0[i], other});
    d.tables.emplace(id, std::move(t));
  }
  return d;
}

std::map<std::string, Configuration> empty_configs(const Dataset& d) {
  std::map<std::string, Configuration> out;
  for (const auto& [id, _] : d.tables) out[id] = Configuration{};
  return out;
}

TEST(Distribution, AllZero) {
  const auto d = distribution_fixture({0, 0, 0, 0});
  const auto dist = correct_count_distribution(d, empty_configs(d));
  EXPECT_EQ(dist.max_count, 8);
  ASSERT_EQ(dist.fractions.size(), 9u);
  EXPECT_DOUBLE_EQ(dist.fractions[0], 1.0);
  EXPECT_EQ(dist.problems, 4u);
}

TEST(Distribution, TwoProblemsSplitEvenly) {
  const auto d = distribution_fixture({3, 5});
  const auto dist = correct_count_distribution(d, empty_configs(d));
  EXPECT_DOUBLE_EQ(dist.fractions[3], 0.5);
  EXPECT_DOUBLE_EQ(dist.fractions[5], 0.5);
  EXPECT_EQ(std::accumulate(dist.histogram.begin(), dist.histogram.end(), std::size_t{0}), 2u);
}

TEST(Distribution, BackboneShapedFixture) {
  std::vector<int> run0;
  run0.insert(run0.end(), 4121, 0);
  run0.insert(run0.end(), 135, 8);
  for (int c = 1; c <= 7; ++c) run0.insert(run0.end(), c == 1 ? 824 : 820, c);
  ASSERT_EQ(run0.size(), 10000u);
  const auto d = distribution_fixture(run0, 3);
  const auto dist = correct_count_distribution(d, empty_configs(d));
  EXPECT_NEAR(dist.fractions[0], 0.4121, 1e-12);
  EXPECT_NEAR(dist.fractions[8], 0.0135, 1e-12);
  EXPECT_EQ(to_json(dist).at("mode"), "run");
  EXPECT_NE(distribution_columns(dist).find("0.412100"), std::string::npos);
}

TEST(Distribution, FractionsSumToOne) {
  std::mt19937 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> run0(1 + rng() % 200);
    for (auto& c : run0) c = static_cast<int>(rng() % 9);
    const auto d = distribution_fixture(run0);
    for (auto mode : {std::optional<int>{0}, std::optional<int>{1}, std::optional<int>{}}) {
      const auto dist = correct_count_distribution(d, empty_configs(d), mode);
      EXPECT_NEAR(std::accumulate(dist.fractions.begin(), dist.fractions.end(), 0.0), 1.0, 1e-12);
    }
  }
}

TEST(Distribution, PooledAndErrors) {
  const auto d = distribution_fixture({3, 5}, 2);
  const auto pooled = correct_count_distribution(d, empty_configs(d), std::nullopt);
  EXPECT_EQ(pooled.max_count, 16);
  EXPECT_DOUBLE_EQ(pooled.fractions[5], 0.5);
  EXPECT_DOUBLE_EQ(pooled.fractions[7], 0.5);
  EXPECT_EQ(to_json(pooled).at("mode"), "pooled");
  EXPECT_THROW(correct_count_distribution(d, empty_configs(d), 2), ValidationError);
  std::map<std::string, Configuration> missing{{"nope", Configuration{}}};
  EXPECT_THROW(correct_count_distribution(d, missing), NotEvaluatedError);
}

TEST(Jaccard, Examples) {
  const std::vector<SelectionOutcome> a{pick("p", {0, 1}, 4), pick("q", {}, 4)};
  EXPECT_DOUBLE_EQ(strategy_jaccard(a, a), 1.0);
  EXPECT_DOUBLE_EQ(strategy_jaccard({pick("p", {0}, 4)}, {pick("p", {1, 2}, 4)}), 0.0);
  EXPECT_DOUBLE_EQ(strategy_jaccard({pick("p", {1, 2}, 4)}, {pick("p", {2, 3}, 4)}), 1.0 / 3);
  EXPECT_DOUBLE_EQ(strategy_jaccard({pick("p", {}, 4)}, {pick("p", {}, 4)}), 1.0);
}

TEST(Jaccard, MismatchListsSymmetricDifference) {
  try {
    strategy_jaccard({pick("a", {}, 1), pick("b", {}, 1)}, {pick("b", {}, 1), pick("c", {}, 1)});
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("a, c"), std::string::npos) << what;
  }
}

TEST(Jaccard, SymmetricAndOneIffEqual) {
  std::mt19937 rng(31);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<SelectionOutcome> a;
    std::vector<SelectionOutcome> b;
    for (int p = 0; p < 5; ++p) {
      std::vector<int> sa;
      std::vector<int> sb;
      for (int i = 0; i < 4; ++i) {
        if (rng() % 2) sa.push_back(i);
        if (rng() % 4 == 0 ? rng() % 2 : (std::find(sa.begin(), sa.end(), i) != sa.end())) {
          sb.push_back(i);
        }
      }
      a.push_back(pick("p" + std::to_string(p), sa, 4));
      b.push_back(pick("p" + std::to_string(p), sb, 4));
    }
    const double ab = strategy_jaccard(a, b);
    EXPECT_DOUBLE_EQ(ab, strategy_jaccard(b, a));
    bool equal = true;
    for (int p = 0; p < 5; ++p) equal = equal && a[p].selected == b[p].selected;
    EXPECT_EQ(ab == 1.0, equal);
  }
}

class RecordingEvaluator final : public PromptEvaluator {
 public:
  RunCounts evaluate_prompt(const Problem&, const std::string& prompt, int runs, int) override {
    prompts.push_back(prompt);
    return RunCounts(runs, 1);
  }
  std::vector<std::string> prompts;
};

Problem ten_token_problem() {
  return {"t", "Q?", std::string("t1 t2 t3 t4 t5 t6 t7 t8 t9 t10"), "1"};
}

TEST(PrefixSweep, EndpointsOfTheRatioRange) {
  RecordingEvaluator eval;
  const auto problem = ten_token_problem();
  const auto points = prefix_sweep(problem, {0, 100}, eval, 2, 4);
  ASSERT_EQ(points.size(), 2u);
  EXPECT_EQ(points[0].hint_text, "");
  EXPECT_EQ(points[0].tokens, 0u);
  EXPECT_EQ(eval.prompts[0], emit_prompt(problem, ""));
  EXPECT_EQ(points[1].tokens, 10u);
  EXPECT_EQ(points[1].hint_text, *problem.reference_solution);
  EXPECT_DOUBLE_EQ(points[1].accuracy, 0.25);
}

TEST(PrefixSweep, ValidatesInput) {
  RecordingEvaluator eval;
  auto problem = ten_token_problem();
  EXPECT_THROW(prefix_sweep(problem, {120}, eval, 1, 1), ValidationError);
  problem.reference_solution.reset();
  EXPECT_THROW(prefix_sweep(problem, {0}, eval, 1, 1), ValidationError);
}

TEST(PrefixSweep, HintsGrowByPrefix) {
  RecordingEvaluator eval;
  std::vector<double> ratios;
  for (int r = 0; r <= 100; r += 5) ratios.push_back(r);
  const auto points = prefix_sweep(ten_token_problem(), ratios, eval, 1, 1);
  for (std::size_t i = 1; i < points.size(); ++i) {
    EXPECT_EQ(points[i].hint_text.compare(0, points[i - 1].hint_text.size(),
                                          points[i - 1].hint_text),
              0);
    EXPECT_GE(points[i].tokens, points[i - 1].tokens);
  }
}

TEST(PrefixSweep, PlantedJumpBetweenThirtyAndForty) {
  const auto tw = make_threshold_world(10, 4);
  ThresholdPromptEvaluator eval(tw, SampleMode::exact);
  std::vector<double> ratios;
  for (int r = 0; r <= 90; r += 10) ratios.push_back(r);
  const auto points = prefix_sweep(tw.problem, ratios, eval, 1, 1 << 20);
  for (std::size_t i = 1; i < points.size(); ++i) {
    if (points[i].ratio == 40) {
      EXPECT_GT(points[i].accuracy, points[i - 1].accuracy + 0.5);
    } else {
      EXPECT_DOUBLE_EQ(points[i].accuracy, points[i - 1].accuracy) << points[i].ratio;
    }
  }
  EXPECT_NE(prefix_columns(points).find("ratio"), std::string::npos);
}

}  // namespace
}  // namespace kpsel
