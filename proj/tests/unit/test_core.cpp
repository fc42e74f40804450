#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "kpsel/core.hpp"
#include "tables.hpp"

namespace kpsel {
namespace {

using testing::make_table;

TEST(Canonicalize, SortsAndDeduplicates) {
  EXPECT_EQ(Configuration::canonicalize({2, 0, 2}, 3).indices(), (std::vector<int>{0, 2}));
  EXPECT_TRUE(Configuration::canonicalize({}, 3).empty());
  EXPECT_EQ(Configuration::canonicalize({0, 1, 2}, 3), Configuration::full(3));
}

TEST(Canonicalize, RejectsOutOfRangeNamingTheIndex) {
  try {
    Configuration::canonicalize({0, 5}, 3);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find('5'), std::string::npos);
  }
  EXPECT_THROW(Configuration::canonicalize({-1}, 3), ValidationError);
}

TEST(Canonicalize, IsIdempotentOnRandomInput) {
  std::mt19937 rng(11);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(rng() % 10);
    std::vector<int> raw(rng() % 15);
    for (auto& x : raw) x = static_cast<int>(rng() % n);
    const auto once = Configuration::canonicalize(raw, n);
    const auto twice = Configuration::canonicalize(once.indices(), n);
    EXPECT_EQ(once, twice);
    EXPECT_TRUE(std::is_sorted(once.begin(), once.end()));
    EXPECT_EQ(std::adjacent_find(once.begin(), once.end()), once.end());
  }
}

TEST(Configuration, KeyIsCanonicalSerialization) {
  EXPECT_EQ(Configuration{}.key(), "[]");
  EXPECT_EQ(Configuration::canonicalize({2, 0}, 3).key(), "[0,2]");
  EXPECT_EQ(Configuration::canonicalize({2, 0, 2}, 3).key(),
            Configuration::canonicalize({0, 2}, 3).key());
}

TEST(Configuration, WithoutRemovesMembers) {
  const auto k = Configuration::full(4);
  EXPECT_EQ(k.without(1).indices(), (std::vector<int>{0, 2, 3}));
  EXPECT_EQ(k.without(Configuration::canonicalize({0, 3}, 4)).indices(),
            (std::vector<int>{1, 2}));
  EXPECT_EQ(k.without(7), k);
}

TEST(Configuration, TieBreakPrefersFewerThenLexicographic) {
  const auto a = Configuration::canonicalize({0, 2}, 3);
  const auto b = Configuration::canonicalize({1, 2}, 3);
  const auto c = Configuration::canonicalize({2}, 3);
  EXPECT_TRUE(preferred_on_tie(c, a));
  EXPECT_TRUE(preferred_on_tie(a, b));
  EXPECT_FALSE(preferred_on_tie(b, a));
  EXPECT_TRUE(preferred_on_tie(Configuration{}, c));
}

TEST(PooledAccuracy, Examples) {
  const auto t = make_table("p", 1, 8, 32,
                            {{{}, RunCounts(8, 32)},
                             {{0}, RunCounts(8, 16)}});
  EXPECT_DOUBLE_EQ(t.pooled_accuracy(Configuration{}), 1.0);
  EXPECT_DOUBLE_EQ(t.pooled_accuracy(Configuration::full(1)), 0.5);
  const auto u = make_table("p", 0, 8, 32, {{{}, {8, 8, 8, 8, 0, 0, 0, 0}}});
  EXPECT_DOUBLE_EQ(u.pooled_accuracy(Configuration{}), 32.0 / 256.0);
  EXPECT_DOUBLE_EQ(u.pooled_accuracy(Configuration{}), 0.125);
}

TEST(PooledAccuracy, MissingCellIsNotEvaluated) {
  const auto t = make_table("p", 2, 8, 32, {{{}, RunCounts(8, 1)}});
  EXPECT_THROW(t.pooled_accuracy(Configuration::full(2)), NotEvaluatedError);
  try {
    t.counts(Configuration::full(2));
  } catch (const NotEvaluatedError& e) {
    EXPECT_EQ(e.problem_id(), "p");
    ASSERT_EQ(e.missing().size(), 1u);
    EXPECT_EQ(e.missing()[0], "[0,1]");
  }
}

// Two-pass population variance in long double, independent of the library.
long double oracle_variance(const RunCounts& counts, int spr) {
  long double mean = 0;
  for (int c : counts) mean += static_cast<long double>(c) / spr;
  mean /= counts.size();
  long double acc = 0;
  for (int c : counts) {
    const long double d = static_cast<long double>(c) / spr - mean;
    acc += d * d;
  }
  return acc / counts.size();
}

TEST(RunVariance, Examples) {
  const RunCounts alternating{4, 6, 4, 6, 4, 6, 4, 6};
  const RunCounts extremes{32, 0, 32, 0, 32, 0, 32, 0};
  const auto t = make_table("p", 2, 8, 32,
                            {{{}, RunCounts(8, 7)}, {{0}, extremes}});
  const auto u = make_table("q", 1, 8, 10, {{{}, alternating}});
  EXPECT_DOUBLE_EQ(t.run_variance(Configuration{}), 0.0);
  EXPECT_NEAR(u.run_variance(Configuration{}), 0.01, 1e-15);
  EXPECT_DOUBLE_EQ(t.run_variance(Configuration::canonicalize({0}, 2)), 0.25);
  EXPECT_NEAR(static_cast<double>(oracle_variance(alternating, 10)), 0.01, 1e-15);
}

TEST(RunVariance, MatchesOracleAndIsPermutationInvariant) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 300; ++trial) {
    RunCounts counts(8);
    for (auto& c : counts) c = static_cast<int>(rng() % 33);
    const auto t = make_table("p", 0, 8, 32, {{{}, counts}});
    const double v = t.run_variance(Configuration{});
    EXPECT_NEAR(v, static_cast<double>(oracle_variance(counts, 32)), 1e-12);

    std::shuffle(counts.begin(), counts.end(), rng);
    const auto s = make_table("p", 0, 8, 32, {{{}, counts}});
    EXPECT_EQ(s.variance_key(Configuration{}), t.variance_key(Configuration{}));
    EXPECT_NEAR(s.run_variance(Configuration{}), v, 1e-15);
  }
}

TEST(PooledAccuracy, EqualsMeanOfRunAccuracies) {
  std::mt19937 rng(9);
  for (int trial = 0; trial < 300; ++trial) {
    RunCounts counts(8);
    for (auto& c : counts) c = static_cast<int>(rng() % 33);
    const auto t = make_table("p", 0, 8, 32, {{{}, counts}});
    double mean = 0;
    for (int j = 0; j < 8; ++j) mean += t.run_accuracy(Configuration{}, j);
    EXPECT_NEAR(t.pooled_accuracy(Configuration{}), mean / 8, 1e-15);
  }
}

TEST(VarianceKey, OrdersLikeVariance) {
  const auto t = make_table("p", 2, 8, 32,
                            {{{}, RunCounts(8, 16)},
                             {{0}, {12, 20, 12, 20, 12, 20, 12, 20}},
                             {{1}, {0, 32, 0, 32, 0, 32, 0, 32}}});
  const auto a = Configuration{};
  const auto b = Configuration::canonicalize({0}, 2);
  const auto c = Configuration::canonicalize({1}, 2);
  EXPECT_EQ(t.variance_key(a), 0);
  EXPECT_LT(t.variance_key(a), t.variance_key(b));
  EXPECT_LT(t.variance_key(b), t.variance_key(c));
  // runs * sum(c^2) - (sum c)^2 = 8 * 4 * (144 + 400) - 128^2.
  EXPECT_EQ(t.variance_key(b), 8 * 4 * (144 + 400) - 128 * 128);
}

TEST(AccuracyTable, RejectsMalformedCells) {
  AccuracyTable t("p", 2, 8, 32);
  EXPECT_THROW(t.insert(Configuration{}, RunCounts(7, 1)), IntegrityError);
  EXPECT_THROW(t.insert(Configuration{}, RunCounts(8, 33)), IntegrityError);
  EXPECT_THROW(t.insert(Configuration{}, RunCounts(8, -1)), IntegrityError);
  EXPECT_THROW(t.insert(Configuration::full(3), RunCounts(8, 1)), ValidationError);
  t.insert(Configuration{}, RunCounts(8, 3));
  EXPECT_NO_THROW(t.insert(Configuration{}, RunCounts(8, 3)));
  EXPECT_THROW(t.insert(Configuration{}, RunCounts(8, 4)), ConflictError);
  EXPECT_EQ(t.cells().size(), 1u);
}

TEST(Strategy, NamesRoundTrip) {
  for (auto s : {Strategy::none, Strategy::all, Strategy::random, Strategy::max_score,
                 Strategy::s_loo, Strategy::t_loo, Strategy::css, Strategy::cbrs,
                 Strategy::exhaustive}) {
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  }
  EXPECT_EQ(parse_strategy("max-score"), Strategy::max_score);
  EXPECT_EQ(parse_strategy("t-loo"), Strategy::t_loo);
  EXPECT_THROW(parse_strategy("greedy"), ValidationError);
}

TEST(KpStatus, FinalStatuses) {
  EXPECT_TRUE(is_final(KpStatus::verified));
  EXPECT_TRUE(is_final(KpStatus::revised));
  EXPECT_FALSE(is_final(KpStatus::raw));
  EXPECT_FALSE(is_final(KpStatus::needs_revision));
  for (auto s : {KpStatus::raw, KpStatus::verified, KpStatus::needs_revision, KpStatus::revised}) {
    EXPECT_EQ(parse_kp_status(to_string(s)), s);
  }
}

}  // namespace
}  // namespace kpsel
