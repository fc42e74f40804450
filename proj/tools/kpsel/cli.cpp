#include "cli.hpp"

#include <atomic>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <thread>

#include "CLI11.hpp"
#include "kpsel/analysis.hpp"
#include "kpsel/curation.hpp"
#include "kpsel/hash.hpp"
#include "kpsel/selection.hpp"
#include "kpsel/store.hpp"
#include "kpsel/synth.hpp"

namespace kpsel::cli {

namespace fs = std::filesystem;

void CliConfig::validate() const {
  if (runs < 1) throw ValidationError("runs must be >= 1");
  if (samples_per_run < 1) throw ValidationError("samples_per_run must be >= 1");
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in [0, 1]");
  if (!(delta >= 0.0 && delta <= 1.0)) throw ValidationError("delta must lie in [0, 1]");
  if (enumeration_cap < 0 || enumeration_cap > 24) {
    throw ValidationError("enumeration_cap must lie in [0, 24]");
  }
  if (exhaustive_cap < 0 || exhaustive_cap > 24) {
    throw ValidationError("exhaustive_cap must lie in [0, 24]");
  }
  if (paradox_subset_cap < 1) throw ValidationError("paradox_subset_cap must be >= 1");
  if (!(injection_threshold >= 0.0 && injection_threshold <= 1.0)) {
    throw ValidationError("injection_threshold must lie in [0, 1]");
  }
  if (parallelism < 1) throw ValidationError("parallelism must be >= 1");
  if (max_attempts < 1) throw ValidationError("max_attempts must be >= 1");
  if (!bucket_edges.empty()) {
    if (bucket_edges.size() < 2 || bucket_edges.front() != 0.0 || bucket_edges.back() != 1.0) {
      throw ValidationError("bucket_edges must run from 0 to 1");
    }
    for (std::size_t i = 1; i < bucket_edges.size(); ++i) {
      if (!(bucket_edges[i] > bucket_edges[i - 1])) {
        throw ValidationError("bucket_edges must increase strictly");
      }
    }
  }
  endpoint.validate();
}

json to_json(const CliConfig& c) {
  return json{{"runs", c.runs},
              {"samples_per_run", c.samples_per_run},
              {"epsilon", c.epsilon},
              {"delta", c.delta},
              {"strict_paper_formula", c.strict_paper_formula},
              {"enumeration_cap", c.enumeration_cap},
              {"exhaustive_cap", c.exhaustive_cap},
              {"paradox_subset_cap", c.paradox_subset_cap},
              {"bucket_edges", c.bucket_edges},
              {"injection_threshold", c.injection_threshold},
              {"endpoint", kpsel::to_json(c.endpoint)},
              {"seed", c.seed},
              {"parallelism", c.parallelism},
              {"max_attempts", c.max_attempts}};
}

CliConfig config_from_json(const json& value, CliConfig c) {
  if (!value.is_object()) throw ValidationError("config must be a JSON object");
  for (const auto& [key, field] : value.items()) {
    try {
      if (key == "data_dir") c.data_dir = field.get<std::string>();
      else if (key == "runs") c.runs = field.get<int>();
      else if (key == "samples_per_run") c.samples_per_run = field.get<int>();
      else if (key == "epsilon") c.epsilon = field.get<double>();
      else if (key == "delta") c.delta = field.get<double>();
      else if (key == "strict_paper_formula") c.strict_paper_formula = field.get<bool>();
      else if (key == "enumeration_cap") c.enumeration_cap = field.get<int>();
      else if (key == "exhaustive_cap") c.exhaustive_cap = field.get<int>();
      else if (key == "paradox_subset_cap") c.paradox_subset_cap = field.get<int>();
      else if (key == "bucket_edges") c.bucket_edges = field.get<std::vector<double>>();
      else if (key == "injection_threshold") c.injection_threshold = field.get<double>();
      else if (key == "endpoint") c.endpoint = endpoint_from_json(field, c.endpoint);
      else if (key == "seed") c.seed = field.get<std::uint64_t>();
      else if (key == "parallelism") c.parallelism = field.get<int>();
      else if (key == "max_attempts") c.max_attempts = field.get<int>();
      else throw ValidationError("unknown config key '" + key + "'");
    } catch (const json::exception& e) {
      throw ValidationError("config key '" + key + "': " + e.what());
    }
  }
  return c;
}

std::string config_hash(const CliConfig& config) {
  return hex64(fnv1a64(to_json(config).dump()));
}

namespace {

class UsageError : public Error {
 public:
  using Error::Error;
};

struct Paths {
  fs::path dir;
  fs::path problems() const { return dir / "problems.jsonl"; }
  fs::path kps() const { return dir / "kps.jsonl"; }
  fs::path rollouts() const { return dir / "rollouts.jsonl"; }
  fs::path raw_rollouts() const { return dir / "rollouts_raw.jsonl"; }
  fs::path worlds() const { return dir / "worlds.jsonl"; }
  fs::path progress() const { return dir / "progress.jsonl"; }
  fs::path selections(const std::string& strategy) const {
    return dir / "selections" / (strategy + ".jsonl");
  }
  fs::path report(const std::string& name) const { return dir / "reports" / name; }
};

// Flag values; a flag overrides the config only when given.
struct Flags {
  std::string config_file;
  std::string data_dir;
  int runs = 0;
  int samples_per_run = 0;
  double epsilon = 0;
  double delta = 0;
  bool strict = false;
  int enumeration_cap = 0;
  int exhaustive_cap = 0;
  int paradox_subset_cap = 0;
  std::vector<double> bucket_edges;
  double injection_threshold = 0;
  std::uint64_t seed = 0;
  int parallelism = 0;
  int max_attempts = 0;
  std::string base_url;
  std::string model;
  std::string api_key_env;
  double temperature = 0;
  double top_p = 0;
  int max_tokens = 0;
  int max_retries = 0;
  double timeout = 0;

  // Rollout and chat sources.
  std::string provider = "cache";
  std::string mode = "sampled";
  std::string server_url;
  std::string chat = "http";
  std::string transcript;
  std::string record;

  // Subcommand arguments.
  std::string strategy;
  std::string out;
  int m = 2;
  std::string selections;
  std::string selections_b;
  int run = 0;
  bool pooled = false;
  std::string problem;
  std::vector<double> ratios{0, 10, 20, 30, 40, 50, 60, 70, 80, 90};
  int n_problems = 100;
  std::string effects;
  int min_kps = 0;
  int max_kps = 0;
  double zero_fraction = 0;
  double paradox_fraction = 0;
  bool no_kps = false;
  std::string host = "127.0.0.1";
  int port = 8765;
};

struct Context {
  CliConfig config;
  Paths paths;
  Flags flags;
  std::string command;
  std::ostream& out;
  std::ostream& err;
};

json header(const Context& ctx, json params = json::object()) {
  return json{{"header", {{"tool", "kpsel"},
                          {"command", ctx.command},
                          {"config_hash", config_hash(ctx.config)},
                          {"params", std::move(params)}}}};
}

// Writes `path` through a temporary file so readers never see a partial file.
class AtomicJsonl {
 public:
  explicit AtomicJsonl(fs::path path)
      : path_(std::move(path)), tmp_(path_.string() + ".tmp"), writer_(tmp_) {}
  void write(const json& record) { writer_.write(record); }
  void commit() {
    writer_ = JsonlWriter(tmp_, JsonlWriter::Mode::append);
    fs::rename(tmp_, path_);
  }

 private:
  fs::path path_;
  fs::path tmp_;
  JsonlWriter writer_;
};

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

void require_data_dir(const Context& ctx) {
  if (!fs::is_directory(ctx.config.data_dir)) {
    throw Error("data directory " + ctx.config.data_dir.string() + " does not exist");
  }
}

std::unique_ptr<RolloutStore> load_store(const Context& ctx) {
  require_data_dir(ctx);
  auto store = std::make_unique<RolloutStore>(ctx.config.runs, ctx.config.samples_per_run);
  if (fs::exists(ctx.paths.problems())) store->ingest_problems(ctx.paths.problems());
  if (fs::exists(ctx.paths.kps())) store->ingest_kps(ctx.paths.kps());
  if (fs::exists(ctx.paths.rollouts())) store->ingest_rollouts(ctx.paths.rollouts());
  if (fs::exists(ctx.paths.raw_rollouts())) store->ingest_raw_rollouts(ctx.paths.raw_rollouts());
  return store;
}

// Newly generated cells are appended as they arrive; compact_rollouts later
// rewrites the file in canonical order.
void persist_rollouts(const Context& ctx, RolloutStore& store) {
  if (!fs::exists(ctx.paths.rollouts())) {
    JsonlWriter(ctx.paths.rollouts()).write(header(ctx));
  }
  store.persist_to(ctx.paths.rollouts());
}

void compact_rollouts(const Context& ctx, const RolloutStore& store) {
  const Dataset data = store.snapshot();
  AtomicJsonl out(ctx.paths.rollouts());
  out.write(header(ctx));
  for (const auto& [id, table] : data.tables) {
    for (const auto& [config, counts] : table.cells()) {
      auto record = rollout_json(id, config, counts, table.samples_per_run());
      record["n_kps"] = table.n_kps();
      out.write(record);
    }
  }
  out.commit();
}

PipelineOptions pipeline_options(const CliConfig& c) {
  PipelineOptions o;
  o.endpoint = c.endpoint;
  o.seed = c.seed;
  o.parallelism = c.parallelism;
  o.max_attempts = c.max_attempts;
  return o;
}

SampleMode sample_mode(const std::string& mode) {
  return mode == "exact" ? SampleMode::exact : SampleMode::sampled;
}

// Chat source with optional transcript recording layered on top.
struct ChatStack {
  std::unique_ptr<ChatClient> base;
  std::unique_ptr<ChatClient> recorder;
  ChatClient& client() { return recorder ? *recorder : *base; }
};

ChatStack make_chat(const Context& ctx) {
  ChatStack stack;
  const auto& f = ctx.flags;
  if (f.chat == "replay") {
    if (f.transcript.empty()) throw UsageError("--chat replay needs --transcript");
    stack.base = std::make_unique<TranscriptReplayer>(f.transcript);
  } else if (f.chat == "simulated") {
    stack.base = std::make_unique<SimulatedChatModel>(read_worlds(ctx.paths.worlds()));
  } else {
    stack.base = std::make_unique<HttpChatClient>(ctx.config.endpoint);
  }
  if (!f.record.empty()) stack.recorder = std::make_unique<TranscriptRecorder>(*stack.base, f.record);
  return stack;
}

// Rollout provider named by --provider, with whatever it needs kept alive.
struct ProviderStack {
  Dataset dataset;
  ChatStack chat;
  std::unique_ptr<ProgressLog> log;
  std::unique_ptr<Provider> provider;
  bool generating() const { return provider != nullptr; }
};

std::unique_ptr<ProviderStack> make_provider(const Context& ctx, const RolloutStore& store) {
  auto stack = std::make_unique<ProviderStack>();
  const auto& kind = ctx.flags.provider;
  if (kind == "cache") return stack;
  if (kind == "synth") {
    stack->provider = std::make_unique<SyntheticProvider>(read_worlds(ctx.paths.worlds()),
                                                          sample_mode(ctx.flags.mode));
  } else if (kind == "server") {
    if (ctx.flags.server_url.empty()) throw UsageError("--provider server needs --server-url");
    stack->provider = std::make_unique<HttpRolloutProvider>(ctx.flags.server_url);
  } else {
    stack->dataset = store.snapshot();
    stack->chat = make_chat(ctx);
    stack->log = std::make_unique<ProgressLog>(ctx.paths.progress());
    stack->provider = std::make_unique<EndpointProvider>(
        stack->dataset, stack->chat.client(), pipeline_options(ctx.config), stack->log.get());
  }
  return stack;
}

int report_failures(const Context& ctx, const std::vector<BatchFailure>& failures) {
  if (failures.empty()) return kOk;
  AtomicJsonl file(ctx.paths.report(ctx.command + "_failures.jsonl"));
  file.write(header(ctx));
  json list = json::array();
  for (const auto& f : failures) {
    json item{{"problem_id", f.problem_id}, {"message", f.message}};
    file.write(item);
    list.push_back(item);
  }
  file.commit();
  ctx.err << json{{"status", "partial_failure"}, {"command", ctx.command}, {"failures", list}}
                 .dump()
          << '\n';
  return kPartialFailure;
}

// Runs `fn` over items with `parallelism` workers; output order is the
// caller's responsibility.
template <typename Fn>
void parallel_for(std::size_t count, int parallelism, Fn fn) {
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < count; i = next.fetch_add(1)) fn(i);
  };
  const int workers = std::max(1, std::min<int>(parallelism, static_cast<int>(count)));
  if (workers == 1) {
    worker();
    return;
  }
  std::vector<std::jthread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
}

int cmd_ingest(Context& ctx) {
  require_data_dir(ctx);
  RolloutStore store(ctx.config.runs, ctx.config.samples_per_run);
  json counts = json::object();
  auto ingest = [&](const char* name, const fs::path& path, auto method) {
    counts[name] = fs::exists(path) ? json((store.*method)(path)) : json(nullptr);
  };
  ingest("problems", ctx.paths.problems(), &RolloutStore::ingest_problems);
  ingest("kps", ctx.paths.kps(), &RolloutStore::ingest_kps);
  ingest("rollouts", ctx.paths.rollouts(), &RolloutStore::ingest_rollouts);
  ingest("raw_rollouts", ctx.paths.raw_rollouts(), &RolloutStore::ingest_raw_rollouts);
  counts["tables"] = store.snapshot().tables.size();
  ctx.out << counts.dump() << '\n';
  return kOk;
}

int cmd_evaluate(Context& ctx) {
  auto store = load_store(ctx);
  if (ctx.flags.provider == "cache") throw UsageError("evaluate needs a generating --provider");
  auto providers = make_provider(ctx, *store);
  persist_rollouts(ctx, *store);

  const auto ids = store->problem_ids();
  std::vector<std::optional<std::string>> errors(ids.size());
  parallel_for(ids.size(), ctx.config.parallelism, [&](std::size_t i) {
    try {
      const auto table = store->table(ids[i]);
      const int n = table ? table->n_kps() : static_cast<int>(store->kps(ids[i]).size());
      for (const auto& config : loo_candidates(n)) {
        store->fetch_or_request(ids[i], config, *providers->provider);
      }
    } catch (const Error& e) {
      errors[i] = e.what();
    }
  });
  compact_rollouts(ctx, *store);

  std::vector<BatchFailure> failures;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (errors[i]) failures.push_back({ids[i], *errors[i]});
  }
  ctx.out << json{{"problems", ids.size()},
                  {"provider_invocations", store->provider_invocations()},
                  {"failures", failures.size()}}
                 .dump()
          << '\n';
  return report_failures(ctx, failures);
}

SelectionParams selection_params(const Context& ctx, Strategy strategy) {
  SelectionParams p;
  p.strategy = strategy;
  p.epsilon = ctx.config.epsilon;
  p.strict_paper_formula = ctx.config.strict_paper_formula;
  p.delta = ctx.config.delta;
  p.css_cap = ctx.config.enumeration_cap;
  p.exhaustive_cap = ctx.config.exhaustive_cap;
  p.seed = ctx.config.seed;
  p.parallelism = ctx.config.parallelism;
  return p;
}

int cmd_select(Context& ctx) {
  Strategy strategy;
  try {
    strategy = parse_strategy(ctx.flags.strategy);
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
  auto store = load_store(ctx);
  auto providers = make_provider(ctx, *store);
  RequesterFactory requesters;
  if (providers->generating()) {
    persist_rollouts(ctx, *store);
    requesters = [&](const std::string& id) { return store->requester(id, *providers->provider); };
  }
  const BatchResult result = batch_select(store->snapshot(), selection_params(ctx, strategy),
                                          requesters);
  if (providers->generating() && store->provider_invocations() > 0) compact_rollouts(ctx, *store);

  const std::string name(to_string(strategy));
  const fs::path path = ctx.flags.out.empty() ? ctx.paths.selections(name) : fs::path(ctx.flags.out);
  AtomicJsonl file(path);
  file.write(header(ctx, {{"strategy", name}}));
  for (const auto& outcome : result.outcomes) file.write(to_json(outcome));
  file.write(json{{"summary", to_json(result.summary)}});
  file.commit();
  ctx.out << to_json(result.summary).dump() << '\n';
  return report_failures(ctx, result.failures);
}

int cmd_paradox(Context& ctx) {
  auto store = load_store(ctx);
  auto providers = make_provider(ctx, *store);
  RequesterFactory requesters;
  if (providers->generating()) {
    persist_rollouts(ctx, *store);
    requesters = [&](const std::string& id) { return store->requester(id, *providers->provider); };
  }
  ParadoxOptions options;
  options.m = ctx.flags.m;
  options.subset_cap = ctx.config.paradox_subset_cap;
  options.seed = ctx.config.seed;
  const ParadoxReport report = paradox_stats(store->snapshot(), options, requesters);
  if (providers->generating() && store->provider_invocations() > 0) compact_rollouts(ctx, *store);

  AtomicJsonl file(ctx.paths.report("paradox_m" + std::to_string(options.m) + ".jsonl"));
  file.write(header(ctx, {{"m", options.m}}));
  file.write(to_json(report));
  file.commit();
  ctx.out << json{{"m", report.m},
                  {"pairs_examined", report.pairs_examined},
                  {"p_m", report.p_m},
                  {"delta_m", report.delta_m ? json(*report.delta_m) : json(nullptr)},
                  {"p_m_per_problem",
                   report.p_m_per_problem ? json(*report.p_m_per_problem) : json(nullptr)}}
                 .dump()
          << '\n';
  return report_failures(ctx, report.failures);
}

std::vector<SelectionOutcome> selections_flag(const Context& ctx, const std::string& value) {
  if (value.empty()) throw UsageError("--selections is required");
  fs::path path = value;
  if (!fs::exists(path) && path.extension().empty()) path = ctx.paths.selections(value);
  return read_selections(path);
}

int cmd_buckets(Context& ctx) {
  auto store = load_store(ctx);
  const auto selections = selections_flag(ctx, ctx.flags.selections);
  const auto edges =
      ctx.config.bucket_edges.empty() ? default_bucket_edges() : ctx.config.bucket_edges;
  const BucketReport report = difficulty_buckets(store->snapshot(), selections, edges);
  AtomicJsonl file(ctx.paths.report("buckets.jsonl"));
  file.write(header(ctx, {{"selections", ctx.flags.selections}}));
  file.write(to_json(report));
  file.commit();
  write_text(ctx.paths.report("buckets.txt"), bucket_columns(report));
  ctx.out << bucket_columns(report);
  return report_failures(ctx, report.failures);
}

int cmd_distribution(Context& ctx) {
  auto store = load_store(ctx);
  const Dataset data = store->snapshot();
  std::map<std::string, Configuration> configs;
  if (ctx.flags.selections.empty()) {
    for (const auto& [id, table] : data.tables) configs[id] = Configuration{};
  } else {
    for (const auto& s : selections_flag(ctx, ctx.flags.selections)) configs[s.problem_id] = s.selected;
  }
  const std::optional<int> run =
      ctx.flags.pooled ? std::nullopt : std::optional<int>(ctx.flags.run);
  const CountDistribution dist = correct_count_distribution(data, configs, run);
  AtomicJsonl file(ctx.paths.report("distribution.jsonl"));
  file.write(header(ctx, {{"selections", ctx.flags.selections},
                          {"run", run ? json(*run) : json(nullptr)}}));
  file.write(to_json(dist));
  file.commit();
  write_text(ctx.paths.report("distribution.txt"), distribution_columns(dist));
  ctx.out << distribution_columns(dist);
  return kOk;
}

int cmd_jaccard(Context& ctx) {
  const auto a = selections_flag(ctx, ctx.flags.selections);
  const auto b = selections_flag(ctx, ctx.flags.selections_b);
  const double value = strategy_jaccard(a, b);
  AtomicJsonl file(ctx.paths.report("jaccard.jsonl"));
  file.write(header(ctx, {{"a", ctx.flags.selections}, {"b", ctx.flags.selections_b}}));
  file.write(json{{"jaccard", value}, {"problems", a.size()}});
  file.commit();
  ctx.out << json{{"jaccard", value}, {"problems", a.size()}}.dump() << '\n';
  return kOk;
}

int cmd_prefix_sweep(Context& ctx) {
  auto store = load_store(ctx);
  const auto problem = store->problem(ctx.flags.problem);
  if (!problem) throw UsageError("unknown problem '" + ctx.flags.problem + "'");
  ChatStack chat = make_chat(ctx);
  EndpointPromptEvaluator evaluator(chat.client(), pipeline_options(ctx.config));
  const auto points = prefix_sweep(*problem, ctx.flags.ratios, evaluator, ctx.config.runs,
                                   ctx.config.samples_per_run);
  AtomicJsonl file(ctx.paths.report("prefix_" + problem->id + ".jsonl"));
  file.write(header(ctx, {{"problem", problem->id}, {"ratios", ctx.flags.ratios}}));
  for (const auto& p : points) file.write(to_json(p));
  file.commit();
  write_text(ctx.paths.report("prefix_" + problem->id + ".txt"), prefix_columns(points));
  ctx.out << prefix_columns(points);
  return kOk;
}

void write_dataset_files(const Context& ctx, const Dataset& data) {
  AtomicJsonl problems(ctx.paths.problems());
  problems.write(header(ctx));
  for (const auto& [id, p] : data.problems) problems.write(to_json(p));
  problems.commit();
  AtomicJsonl kps(ctx.paths.kps());
  kps.write(header(ctx));
  for (const auto& [id, list] : data.kps) {
    for (const auto& kp : list) kps.write(to_json(kp));
  }
  kps.commit();
}

int cmd_curate(Context& ctx) {
  auto store = load_store(ctx);
  Dataset data = store->snapshot();
  ChatStack chat = make_chat(ctx);
  const CurationReport report = curate(data, chat.client(), pipeline_options(ctx.config));
  write_dataset_files(ctx, data);

  AtomicJsonl file(ctx.paths.report("curation.jsonl"));
  file.write(header(ctx));
  std::vector<BatchFailure> failures;
  for (const auto& entry : report.entries) {
    file.write(to_json(entry));
    if (!entry.error.empty()) failures.push_back({entry.problem_id, entry.error});
  }
  file.commit();
  ctx.out << json{{"curated", report.entries.size()}, {"failures", report.failures()}}.dump()
          << '\n';
  return report_failures(ctx, failures);
}

int cmd_export(Context& ctx) {
  auto store = load_store(ctx);
  const auto selections = selections_flag(ctx, ctx.flags.selections);
  ExportOptions options;
  options.injection_threshold = ctx.config.injection_threshold;
  const ExportResult result = export_training_data(store->snapshot(), selections, options);

  const fs::path path = ctx.flags.out.empty() ? ctx.paths.dir / "export.jsonl" : fs::path(ctx.flags.out);
  AtomicJsonl file(path);
  file.write(header(ctx, {{"selections", ctx.flags.selections}}));
  for (const auto& record : result.records) file.write(record);
  file.write(json{{"summary", to_json(result.summary)}});
  file.commit();
  ctx.out << to_json(result.summary).dump() << '\n';
  std::vector<BatchFailure> skipped;
  for (const auto& s : result.skipped) skipped.push_back({s.problem_id, s.reason});
  return report_failures(ctx, skipped);
}

EffectDistributions effect_flags(const Context& ctx, CLI::App& app) {
  EffectDistributions effects;
  if (!ctx.flags.effects.empty()) {
    try {
      effects = effects_from_json(json::parse(ctx.flags.effects), effects);
    } catch (const json::exception& e) {
      throw UsageError(std::string("--effects: ") + e.what());
    }
  }
  if (app.count("--min-kps")) effects.min_kps = ctx.flags.min_kps;
  if (app.count("--max-kps")) effects.max_kps = ctx.flags.max_kps;
  if (app.count("--zero-fraction")) effects.zero_fraction = ctx.flags.zero_fraction;
  if (app.count("--paradox-fraction")) effects.paradox_fraction = ctx.flags.paradox_fraction;
  effects.validate();
  return effects;
}

int cmd_synth_generate(Context& ctx, CLI::App& app) {
  const EffectDistributions effects = effect_flags(ctx, app);
  const Benchmark bench = generate_benchmark(ctx.flags.n_problems, effects, ctx.config.seed);
  const json params{{"problems", ctx.flags.n_problems}, {"effects", to_json(effects)}};
  AtomicJsonl problems(ctx.paths.problems());
  problems.write(header(ctx, params));
  for (const auto& [id, p] : bench.dataset.problems) problems.write(to_json(p));
  problems.commit();
  if (!ctx.flags.no_kps) {
    AtomicJsonl kps(ctx.paths.kps());
    kps.write(header(ctx, params));
    for (const auto& [id, list] : bench.dataset.kps) {
      for (const auto& kp : list) kps.write(to_json(kp));
    }
    kps.commit();
  }
  AtomicJsonl worlds(ctx.paths.worlds());
  worlds.write(header(ctx, params));
  for (const auto& w : bench.worlds) worlds.write(to_json(w));
  worlds.commit();
  ctx.out << json{{"problems", bench.worlds.size()}, {"seed", ctx.config.seed}}.dump() << '\n';
  return kOk;
}

int cmd_synth_serve(Context& ctx) {
  const auto worlds = read_worlds(ctx.paths.worlds());
  SyntheticProvider provider(worlds, sample_mode(ctx.flags.mode));
  SimulatedChatModel chat(worlds);
  SynthServer server(provider, &chat);
  const int port = server.bind(ctx.flags.host, ctx.flags.port);
  ctx.out << json{{"listening", ctx.flags.host + ":" + std::to_string(port)}}.dump() << std::endl;
  server.serve();
  return kOk;
}

void apply_overrides(CliConfig& c, const Flags& f, const CLI::App& app) {
  auto given = [&](const char* name) { return app.count(name) > 0; };
  if (given("--data-dir")) c.data_dir = f.data_dir;
  if (given("--runs")) c.runs = f.runs;
  if (given("--samples-per-run")) c.samples_per_run = f.samples_per_run;
  if (given("--epsilon")) c.epsilon = f.epsilon;
  if (given("--delta")) c.delta = f.delta;
  if (given("--strict-paper-formula")) c.strict_paper_formula = f.strict;
  if (given("--enumeration-cap")) c.enumeration_cap = f.enumeration_cap;
  if (given("--exhaustive-cap")) c.exhaustive_cap = f.exhaustive_cap;
  if (given("--paradox-subset-cap")) c.paradox_subset_cap = f.paradox_subset_cap;
  if (given("--bucket-edges")) c.bucket_edges = f.bucket_edges;
  if (given("--injection-threshold")) c.injection_threshold = f.injection_threshold;
  if (given("--seed")) c.seed = f.seed;
  if (given("--parallelism")) c.parallelism = f.parallelism;
  if (given("--max-attempts")) c.max_attempts = f.max_attempts;
  if (given("--base-url")) c.endpoint.base_url = f.base_url;
  if (given("--model")) c.endpoint.model_name = f.model;
  if (given("--api-key-env")) c.endpoint.api_key_env_var = f.api_key_env;
  if (given("--temperature")) c.endpoint.temperature = f.temperature;
  if (given("--top-p")) c.endpoint.top_p = f.top_p;
  if (given("--max-tokens")) c.endpoint.max_tokens = f.max_tokens;
  if (given("--max-retries")) c.endpoint.max_retries = f.max_retries;
  if (given("--timeout")) c.endpoint.request_timeout = f.timeout;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Flags f;
  CLI::App app{"Knowledge-point hint selection and curation toolkit", "kpsel"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_version_flag("--version", "kpsel 1.0.0");

  app.add_option("--config", f.config_file, "JSON config file; flags override its keys");
  app.add_option("--data-dir", f.data_dir, "Directory holding the dataset files");
  app.add_option("--runs", f.runs, "Independent evaluation runs per configuration");
  app.add_option("--samples-per-run", f.samples_per_run, "Samples per run");
  app.add_option("--epsilon", f.epsilon, "Tolerance for t-loo");
  app.add_option("--delta", f.delta, "Per-run near-optimality band for cbrs");
  app.add_flag("--strict-paper-formula", f.strict, "Use the literal pruning-set formula in phi");
  app.add_option("--enumeration-cap", f.enumeration_cap, "Largest |C| css will enumerate");
  app.add_option("--exhaustive-cap", f.exhaustive_cap, "Largest KP count for exhaustive search");
  app.add_option("--paradox-subset-cap", f.paradox_subset_cap, "Subsets examined per problem");
  app.add_option("--bucket-edges", f.bucket_edges, "Comma-separated edges from 0 to 1")
      ->delimiter(',');
  app.add_option("--injection-threshold", f.injection_threshold,
                 "Hints are exported only below this no-KP accuracy");
  app.add_option("--seed", f.seed, "Seed for every random choice");
  app.add_option("--parallelism", f.parallelism, "Worker threads");
  app.add_option("--max-attempts", f.max_attempts, "Solution-generation attempts per problem");
  app.add_option("--base-url", f.base_url, "Chat endpoint base url");
  app.add_option("--model", f.model, "Chat model name");
  app.add_option("--api-key-env", f.api_key_env, "Environment variable holding the API key");
  app.add_option("--temperature", f.temperature, "Sampling temperature");
  app.add_option("--top-p", f.top_p, "Nucleus sampling mass");
  app.add_option("--max-tokens", f.max_tokens, "Completion token limit");
  app.add_option("--max-retries", f.max_retries, "Retries per chat request");
  app.add_option("--timeout", f.timeout, "Chat request timeout in seconds");

  auto provider_flags = [&](CLI::App* sub) {
    sub->add_option("--provider", f.provider, "Rollout source for missing cells")
        ->check(CLI::IsMember({"cache", "synth", "server", "endpoint"}));
    sub->add_option("--mode", f.mode, "Synthetic sampling mode")
        ->check(CLI::IsMember({"sampled", "exact"}));
    sub->add_option("--server-url", f.server_url, "Base url of a running `synth serve`");
  };
  auto chat_flags = [&](CLI::App* sub) {
    sub->add_option("--chat", f.chat, "Chat source")
        ->check(CLI::IsMember({"http", "simulated", "replay"}));
    sub->add_option("--transcript", f.transcript, "Transcript to replay");
    sub->add_option("--record", f.record, "Append every exchange to this transcript");
  };

  auto* ingest = app.add_subcommand("ingest", "Load the dataset files and print record counts");
  auto* evaluate = app.add_subcommand("evaluate", "Fill missing no-KP, all-KP and leave-one-out cells");
  provider_flags(evaluate);
  chat_flags(evaluate);
  auto* select = app.add_subcommand("select", "Run a selection strategy over every problem");
  select->add_option("--strategy", f.strategy, "none|all|random|max-score|s-loo|t-loo|css|cbrs|exhaustive")
      ->required();
  select->add_option("--out", f.out, "Selections file (default selections/<strategy>.jsonl)");
  provider_flags(select);
  chat_flags(select);
  auto* paradox = app.add_subcommand("paradox", "Joint-removal interaction statistics");
  paradox->add_option("--m", f.m, "Subset size")->check(CLI::Range(2, 64));
  provider_flags(paradox);
  chat_flags(paradox);
  auto* buckets = app.add_subcommand("buckets", "Accuracy by no-KP difficulty bucket");
  buckets->add_option("--selections", f.selections, "Selections file or strategy name")->required();
  auto* distribution = app.add_subcommand("distribution", "Histogram of correct counts");
  distribution->add_option("--selections", f.selections, "Selections file or strategy name");
  distribution->add_option("--run", f.run, "Run to histogram (default 0)");
  distribution->add_flag("--pooled", f.pooled, "Histogram counts pooled over all runs");
  auto* jaccard = app.add_subcommand("jaccard", "Mean per-problem overlap of two selections");
  jaccard->add_option("--a", f.selections, "First selections")->required();
  jaccard->add_option("--b", f.selections_b, "Second selections")->required();
  auto* sweep = app.add_subcommand("prefix-sweep", "Accuracy against solution-prefix hints");
  sweep->add_option("--problem", f.problem, "Problem id")->required();
  sweep->add_option("--ratios", f.ratios, "Comma-separated percentages")->delimiter(',');
  chat_flags(sweep);
  auto* curate_cmd = app.add_subcommand("curate", "Generate solutions, extract and review KPs");
  chat_flags(curate_cmd);
  auto* export_cmd = app.add_subcommand("export", "Write hint-augmented training prompts");
  export_cmd->add_option("--selections", f.selections, "Selections file or strategy name")
      ->required();
  export_cmd->add_option("--out", f.out, "Export file (default export.jsonl)");
  auto* synth = app.add_subcommand("synth", "Synthetic benchmark tools");
  synth->require_subcommand(1);
  auto* generate = synth->add_subcommand("generate", "Write a synthetic benchmark");
  generate->add_option("--problems", f.n_problems, "Problem count")->check(CLI::NonNegativeNumber);
  generate->add_option("--effects", f.effects, "JSON object of effect distribution overrides");
  generate->add_option("--min-kps", f.min_kps, "Fewest KPs per problem");
  generate->add_option("--max-kps", f.max_kps, "Most KPs per problem");
  generate->add_option("--zero-fraction", f.zero_fraction, "Fraction of zero-effect KPs");
  generate->add_option("--paradox-fraction", f.paradox_fraction,
                       "Probability of a negative pair between positive KPs");
  generate->add_flag("--no-kps", f.no_kps, "Omit the KP file so `curate` can extract it");
  auto* serve = synth->add_subcommand("serve", "Serve rollouts and a simulated chat model over HTTP");
  serve->add_option("--host", f.host, "Bind address");
  serve->add_option("--port", f.port, "Port (0 picks a free one)");
  serve->add_option("--mode", f.mode, "Synthetic sampling mode")
      ->check(CLI::IsMember({"sampled", "exact"}));

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  CLI::App* active = app.get_subcommands().front();
  std::string command = active->get_name();
  CLI::App* leaf = active;
  if (active == synth) {
    leaf = synth->get_subcommands().front();
    command = "synth_" + leaf->get_name();
  }

  try {
    CliConfig config;
    if (!f.config_file.empty()) {
      try {
        config = config_from_json(json::parse(read_file(f.config_file)));
      } catch (const json::exception& e) {
        throw UsageError("config file: " + std::string(e.what()));
      }
    }
    apply_overrides(config, f, app);
    config.validate();
    Context ctx{config, Paths{config.data_dir}, f, command, out, err};

    if (active == ingest) return cmd_ingest(ctx);
    if (active == evaluate) return cmd_evaluate(ctx);
    if (active == select) return cmd_select(ctx);
    if (active == paradox) return cmd_paradox(ctx);
    if (active == buckets) return cmd_buckets(ctx);
    if (active == distribution) return cmd_distribution(ctx);
    if (active == jaccard) return cmd_jaccard(ctx);
    if (active == sweep) return cmd_prefix_sweep(ctx);
    if (active == curate_cmd) return cmd_curate(ctx);
    if (active == export_cmd) return cmd_export(ctx);
    if (leaf == generate) return cmd_synth_generate(ctx, *generate);
    if (leaf == serve) return cmd_synth_serve(ctx);
    throw UsageError("unhandled command");
  } catch (const UsageError& e) {
    err << json{{"status", "usage_error"}, {"command", command}, {"message", e.what()}}.dump()
        << '\n';
    return kUsage;
  } catch (const ValidationError& e) {
    err << json{{"status", "usage_error"}, {"command", command}, {"message", e.what()}}.dump()
        << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << json{{"status", "error"}, {"command", command}, {"message", e.what()}}.dump() << '\n';
    return kRuntime;
  }
}

}  // namespace kpsel::cli
