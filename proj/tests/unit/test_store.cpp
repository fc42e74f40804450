#include <gtest/gtest.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <random>
#include <thread>

#include "kpsel/store.hpp"
#include "tables.hpp"
#include "tempdir.hpp"

namespace kpsel {
namespace {

using testing::TempDir;
using testing::write_file;

const char* kThreeProblems =
    R"({"id":"a","statement":"1+1?","solution":null,"answer":"2"})"
    "\n"
    R"({"id":"b","statement":"2+2?","solution":"4","answer":"4"})"
    "\n"
    R"({"id":"c","statement":"3+3?","answer":"6"})"
    "\n";

class CountingProvider final : public Provider {
 public:
  explicit CountingProvider(int value, std::chrono::milliseconds delay = {})
      : value_(value), delay_(delay) {}
  RunCounts evaluate(const EvaluationRequest& request) override {
    ++calls;
    if (delay_.count() > 0) std::this_thread::sleep_for(delay_);
    return RunCounts(request.runs, std::min(value_, request.samples_per_run));
  }
  std::atomic<int> calls{0};

 private:
  int value_;
  std::chrono::milliseconds delay_;
};

TEST(IngestProblems, CountsRecords) {
  TempDir dir;
  write_file(dir / "problems.jsonl", kThreeProblems);
  RolloutStore store;
  EXPECT_EQ(store.ingest_problems(dir / "problems.jsonl"), 3u);
  ASSERT_TRUE(store.problem("b"));
  EXPECT_EQ(store.problem("b")->reference_solution.value_or(""), "4");
  EXPECT_FALSE(store.problem("a")->reference_solution.has_value());
  EXPECT_EQ(store.problem("c")->gold_answer, "6");
}

TEST(IngestProblems, DuplicateIdIsConflictAtItsLine) {
  TempDir dir;
  write_file(dir / "problems.jsonl",
             R"({"id":"a","statement":"x","answer":"1"})"
             "\n"
             R"({"id":"a","statement":"y","answer":"2"})"
             "\n");
  RolloutStore store;
  try {
    store.ingest_problems(dir / "problems.jsonl");
    FAIL() << "expected ConflictError";
  } catch (const ConflictError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(store.problem("a").has_value());
}

TEST(IngestProblems, EmptyFileIsZero) {
  TempDir dir;
  write_file(dir / "problems.jsonl", "");
  RolloutStore store;
  EXPECT_EQ(store.ingest_problems(dir / "problems.jsonl"), 0u);
}

TEST(IngestProblems, MalformedLineNamesLine) {
  TempDir dir;
  write_file(dir / "problems.jsonl",
             R"({"id":"a","statement":"x","answer":"1"})"
             "\n{not json\n");
  RolloutStore store;
  try {
    store.ingest_problems(dir / "problems.jsonl");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
}

TEST(IngestProblems, HeaderRecordsAreSkipped) {
  TempDir dir;
  write_file(dir / "problems.jsonl",
             std::string(R"({"header":{"tool":"kpsel"}})") + "\n" + kThreeProblems);
  RolloutStore store;
  EXPECT_EQ(store.ingest_problems(dir / "problems.jsonl"), 3u);
}

TEST(IngestProblems, ReingestingSameContentIsIdempotent) {
  TempDir dir;
  write_file(dir / "problems.jsonl", kThreeProblems);
  RolloutStore store;
  EXPECT_EQ(store.ingest_problems(dir / "problems.jsonl"), 3u);
  EXPECT_EQ(store.ingest_problems(dir / "problems.jsonl"), 3u);
  EXPECT_EQ(store.problem_ids().size(), 3u);
}

TEST(IngestKps, RequiresContiguousIndices) {
  TempDir dir;
  write_file(dir / "kps.jsonl",
             R"({"problem_id":"a","index":0,"knowledge":"k","considerations":"c","status":"verified"})"
             "\n"
             R"({"problem_id":"a","index":2,"knowledge":"k","considerations":"c","status":"verified"})"
             "\n");
  RolloutStore store;
  EXPECT_THROW(store.ingest_kps(dir / "kps.jsonl"), ValidationError);
}

TEST(IngestRollouts, ReadsAggregatedCells) {
  TempDir dir;
  write_file(dir / "rollouts.jsonl",
             R"({"problem_id":"a","config":[],"run_counts":[1,2,3,4,5,6,7,8],"samples_per_run":32,"n_kps":2})"
             "\n"
             R"({"problem_id":"a","config":[0,1],"run_counts":[8,8,8,8,8,8,8,8],"samples_per_run":32,"n_kps":2})"
             "\n");
  RolloutStore store;
  EXPECT_EQ(store.ingest_rollouts(dir / "rollouts.jsonl"), 2u);
  const auto table = store.table("a");
  ASSERT_TRUE(table);
  EXPECT_EQ(table->n_kps(), 2);
  EXPECT_EQ(table->correct(Configuration{}), 36);
  EXPECT_EQ(table->correct(Configuration::full(2)), 64);
}

TEST(IngestRollouts, RejectsUnsortedConfig) {
  TempDir dir;
  write_file(dir / "rollouts.jsonl",
             R"({"problem_id":"a","config":[1,0],"run_counts":[1,1,1,1,1,1,1,1],"samples_per_run":32})"
             "\n");
  RolloutStore store;
  EXPECT_THROW(store.ingest_rollouts(dir / "rollouts.jsonl"), Error);
}

std::vector<RolloutRecord> full_records(const std::string& id, const Configuration& config,
                                        int runs, int spr, int correct_total) {
  std::vector<RolloutRecord> out;
  int placed = 0;
  for (int r = 0; r < runs; ++r) {
    for (int s = 0; s < spr; ++s) {
      out.push_back({id, config, r, s, placed < correct_total});
      ++placed;
    }
  }
  return out;
}

TEST(Aggregate, CountsCorrectSamples) {
  const auto records = full_records("p", Configuration{}, 8, 32, 100);
  ASSERT_EQ(records.size(), 256u);
  const auto tables = aggregate(records, 8, 32);
  ASSERT_EQ(tables.size(), 1u);
  EXPECT_EQ(tables.at("p").correct(Configuration{}), 100);
}

TEST(Aggregate, IncompleteRunIsIntegrityError) {
  auto records = full_records("p", Configuration{}, 8, 32, 10);
  records.erase(std::remove_if(records.begin(), records.end(),
                               [](const RolloutRecord& r) { return r.run == 0 && r.sample == 31; }),
                records.end());
  try {
    aggregate(records, 8, 32);
    FAIL() << "expected IntegrityError";
  } catch (const IntegrityError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("'p'"), std::string::npos) << what;
    EXPECT_NE(what.find("run 0"), std::string::npos) << what;
  }
}

TEST(Aggregate, DuplicateSampleIsIntegrityError) {
  auto records = full_records("p", Configuration{}, 1, 4, 2);
  records.push_back(records.front());
  EXPECT_THROW(aggregate(records, 1, 4), IntegrityError);
}

TEST(Aggregate, TwoConfigsGiveTwoCells) {
  auto records = full_records("p", Configuration{}, 8, 32, 10);
  const auto more = full_records("p", Configuration::full(2), 8, 32, 200);
  records.insert(records.end(), more.begin(), more.end());
  const auto tables = aggregate(records, 8, 32, {{"p", 2}});
  EXPECT_EQ(tables.at("p").cells().size(), 2u);
  EXPECT_EQ(tables.at("p").n_kps(), 2);
}

TEST(Aggregate, IsOrderIndependent) {
  std::mt19937 rng(3);
  std::vector<RolloutRecord> records;
  for (int c = 0; c < 3; ++c) {
    const auto config = Configuration::canonicalize({c}, 3);
    for (int r = 0; r < 8; ++r) {
      for (int s = 0; s < 32; ++s) records.push_back({"p", config, r, s, (rng() & 1u) != 0});
    }
  }
  const auto reference = aggregate(records, 8, 32);
  for (int trial = 0; trial < 20; ++trial) {
    std::shuffle(records.begin(), records.end(), rng);
    const auto shuffled = aggregate(records, 8, 32);
    EXPECT_EQ(shuffled.at("p").cells(), reference.at("p").cells());
  }
}

TEST(IngestRawRollouts, AggregatesFromFile) {
  TempDir dir;
  std::string text;
  for (int r = 0; r < 2; ++r) {
    for (int s = 0; s < 2; ++s) {
      text += R"({"problem_id":"a","config":[0],"run":)" + std::to_string(r) +
              R"(,"sample":)" + std::to_string(s) + R"(,"correct":)" +
              (s == 0 ? "true" : "false") + "}\n";
    }
  }
  write_file(dir / "raw.jsonl", text);
  RolloutStore store(2, 2);
  EXPECT_EQ(store.ingest_raw_rollouts(dir / "raw.jsonl"), 4u);
  EXPECT_EQ(store.table("a")->counts(Configuration::full(1)), (RunCounts{1, 1}));
}

RolloutStore* seeded_store(RolloutStore& store) {
  store.add_problem(Problem{"p", "s", std::nullopt, "1"});
  store.set_kps("p", {KnowledgePoint{"p", 0, "k0", "c0", KpStatus::verified},
                      KnowledgePoint{"p", 1, "k1", "c1", KpStatus::verified}});
  store.insert_cell("p", Configuration{}, RunCounts(8, 5));
  return &store;
}

TEST(FetchOrRequest, CachedCellSkipsProvider) {
  RolloutStore store;
  seeded_store(store);
  CountingProvider provider(9);
  EXPECT_EQ(store.fetch_or_request("p", Configuration{}, provider), RunCounts(8, 5));
  EXPECT_EQ(provider.calls.load(), 0);
  EXPECT_EQ(store.provider_invocations(), 0u);
}

TEST(FetchOrRequest, GeneratesMissingCellWithTableShape) {
  RolloutStore store;
  seeded_store(store);
  CountingProvider provider(40);
  const auto counts = store.fetch_or_request("p", Configuration::full(2), provider);
  ASSERT_EQ(counts.size(), 8u);
  for (int c : counts) EXPECT_LE(c, 32);
  EXPECT_TRUE(store.table("p")->contains(Configuration::full(2)));
  EXPECT_EQ(provider.calls.load(), 1);
  store.fetch_or_request("p", Configuration::full(2), provider);
  EXPECT_EQ(provider.calls.load(), 1);
  EXPECT_EQ(store.provider_invocations("p"), 1u);
}

TEST(FetchOrRequest, CacheOnlyMissIsNotEvaluated) {
  RolloutStore store;
  seeded_store(store);
  CacheOnlyProvider provider;
  try {
    store.fetch_or_request("p", Configuration::full(2), provider);
    FAIL() << "expected NotEvaluatedError";
  } catch (const NotEvaluatedError& e) {
    ASSERT_EQ(e.missing().size(), 1u);
    EXPECT_EQ(e.missing()[0], "[0,1]");
  }
  EXPECT_FALSE(store.table("p")->contains(Configuration::full(2)));
}

TEST(FetchOrRequest, RejectsConfigurationsBeyondKpCount) {
  RolloutStore store;
  seeded_store(store);
  CountingProvider provider(1);
  EXPECT_THROW(store.fetch_or_request("p", Configuration::canonicalize({2}, 3), provider),
               ValidationError);
  EXPECT_THROW(store.fetch_or_request("nope", Configuration{}, provider), ValidationError);
}

TEST(FetchOrRequest, SingleFlightUnderConcurrency) {
  RolloutStore store;
  seeded_store(store);
  CountingProvider provider(7, std::chrono::milliseconds(30));
  std::vector<RunCounts> results(8);
  {
    std::vector<std::jthread> threads;
    for (int t = 0; t < 8; ++t) {
      threads.emplace_back([&, t] {
        results[t] = store.fetch_or_request("p", Configuration::canonicalize({1}, 2), provider);
      });
    }
  }
  EXPECT_EQ(provider.calls.load(), 1);
  EXPECT_EQ(store.provider_invocations(), 1u);
  for (const auto& r : results) EXPECT_EQ(r, RunCounts(8, 7));
}

TEST(FetchOrRequest, WritesThroughBeforeReturning) {
  TempDir dir;
  RolloutStore store;
  seeded_store(store);
  store.persist_to(dir / "rollouts.jsonl");
  CountingProvider provider(3);
  store.fetch_or_request("p", Configuration::canonicalize({0}, 2), provider);

  RolloutStore reloaded;
  EXPECT_EQ(reloaded.ingest_rollouts(dir / "rollouts.jsonl"), 1u);
  EXPECT_EQ(reloaded.table("p")->counts(Configuration::canonicalize({0}, 2)), RunCounts(8, 3));
  EXPECT_EQ(reloaded.table("p")->n_kps(), 2);
}

TEST(FetchOrRequest, ProviderFailureIsNotCached) {
  struct Failing final : Provider {
    int calls = 0;
    RunCounts evaluate(const EvaluationRequest&) override {
      ++calls;
      throw Error("boom");
    }
  } failing;
  RolloutStore store;
  seeded_store(store);
  EXPECT_THROW(store.fetch_or_request("p", Configuration::full(2), failing), Error);
  EXPECT_THROW(store.fetch_or_request("p", Configuration::full(2), failing), Error);
  EXPECT_EQ(failing.calls, 2);
}

TEST(Serialization, SelectionRoundTrip) {
  SelectionOutcome o{"p", Strategy::css, Configuration::canonicalize({0, 2}, 3), 0.5, 3, "x"};
  const json j = to_json(o);
  EXPECT_EQ(j.at("selected"), json::array({0, 2}));
  EXPECT_EQ(j.at("strategy"), "css");
  const auto back = selection_from_json(j, 1);
  EXPECT_EQ(back.selected, o.selected);
  EXPECT_EQ(back.strategy, Strategy::css);
  EXPECT_EQ(back.est_accuracy, o.est_accuracy);
  EXPECT_EQ(back.evaluations_requested, 3);
}

TEST(Serialization, WriteThenIngestIsLossless) {
  TempDir dir;
  RolloutStore store;
  seeded_store(store);
  store.insert_cell("p", Configuration::full(2), RunCounts{1, 2, 3, 4, 5, 6, 7, 8});
  const Dataset data = store.snapshot();
  write_problems(dir / "problems.jsonl", data);
  write_kps(dir / "kps.jsonl", data);
  write_rollouts(dir / "rollouts.jsonl", data);

  RolloutStore copy;
  copy.ingest_problems(dir / "problems.jsonl");
  copy.ingest_kps(dir / "kps.jsonl");
  copy.ingest_rollouts(dir / "rollouts.jsonl");
  const Dataset back = copy.snapshot();
  EXPECT_EQ(back.tables.at("p").cells(), data.tables.at("p").cells());
  EXPECT_EQ(back.kps.at("p").size(), 2u);
  EXPECT_EQ(back.problems.at("p").gold_answer, "1");
}

}  // namespace
}  // namespace kpsel
