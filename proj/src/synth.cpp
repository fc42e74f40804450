#include "kpsel/synth.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include "httplib.h"
#include "kpsel/hash.hpp"

namespace kpsel {

namespace {

// Counter-based uniform stream; draw k is a pure function of (key, k).
class Stream {
 public:
  explicit Stream(std::uint64_t key) : key_(key) {}
  double uniform() { return unit_interval(hash_combine(key_, counter_++)); }
  double normal(double mean, double sd) {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return mean + sd * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::string problem_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "syn-%05d", index);
  return buf;
}

std::string wrong_answer(const std::string& gold) {
  try {
    return std::to_string(std::stoll(gold) + 1);
  } catch (const std::exception&) {
    return gold + "'";
  }
}

void check_config(const SyntheticWorld& world, const Configuration& config) {
  if (!config.empty() && config.indices().back() >= world.n_kps) {
    throw ValidationError("problem '" + world.problem_id + "': configuration " + config.key() +
                          " exceeds n_kps " + std::to_string(world.n_kps));
  }
}

std::string_view between(std::string_view text, std::string_view open, std::string_view close) {
  const auto start = text.find(open);
  if (start == std::string_view::npos) return {};
  const auto body = start + open.size();
  const auto end = text.find(close, body);
  if (end == std::string_view::npos) return {};
  return text.substr(body, end - body);
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double true_probability(const SyntheticWorld& world, const Configuration& config) {
  check_config(world, config);
  double logit = world.base;
  const auto& idx = config.indices();
  for (std::size_t a = 0; a < idx.size(); ++a) {
    logit += world.main_effects[static_cast<std::size_t>(idx[a])];
    for (std::size_t b = a + 1; b < idx.size(); ++b) {
      if (auto it = world.pair_effects.find({idx[a], idx[b]}); it != world.pair_effects.end()) {
        logit += it->second;
      }
    }
  }
  return sigmoid(logit);
}

RunCounts sample_rollouts(const SyntheticWorld& world, const Configuration& config, int runs,
                          int samples_per_run, SampleMode mode) {
  if (runs < 1 || samples_per_run < 1) {
    throw ValidationError("runs and samples_per_run must be at least 1");
  }
  const double p = true_probability(world, config);
  RunCounts counts(static_cast<std::size_t>(runs), 0);
  if (mode == SampleMode::exact) {
    const int c = static_cast<int>(std::lround(p * samples_per_run));
    std::fill(counts.begin(), counts.end(), c);
    return counts;
  }
  const std::uint64_t cell =
      hash_combine(hash_combine(world.seed, world.problem_id), config.key());
  for (int run = 0; run < runs; ++run) {
    const std::uint64_t run_key = hash_combine(cell, static_cast<std::uint64_t>(run));
    int c = 0;
    for (int sample = 0; sample < samples_per_run; ++sample) {
      if (unit_interval(hash_combine(run_key, static_cast<std::uint64_t>(sample))) < p) ++c;
    }
    counts[static_cast<std::size_t>(run)] = c;
  }
  return counts;
}

Configuration ground_truth_best(const SyntheticWorld& world, int cap) {
  if (world.n_kps > cap) {
    throw CapExceededError("problem '" + world.problem_id + "': " +
                           std::to_string(world.n_kps) + " KPs exceed the exhaustive cap " +
                           std::to_string(cap));
  }
  Configuration best;
  double best_p = -1.0;
  for (std::uint32_t mask = 0; mask < (1u << world.n_kps); ++mask) {
    std::vector<int> members;
    for (int i = 0; i < world.n_kps; ++i) {
      if (mask & (1u << i)) members.push_back(i);
    }
    const Configuration c = Configuration::canonicalize(members, world.n_kps);
    const double p = true_probability(world, c);
    if (p > best_p || (p == best_p && preferred_on_tie(c, best))) {
      best = c;
      best_p = p;
    }
  }
  return best;
}

AccuracyTable loo_table(const SyntheticWorld& world, int runs, int samples_per_run,
                        SampleMode mode) {
  AccuracyTable table(world.problem_id, world.n_kps, runs, samples_per_run);
  const Configuration full = Configuration::full(world.n_kps);
  std::vector<Configuration> cells{Configuration{}, full};
  for (int i = 0; i < world.n_kps; ++i) cells.push_back(full.without(i));
  for (const auto& c : cells) {
    if (!table.contains(c)) table.insert(c, sample_rollouts(world, c, runs, samples_per_run, mode));
  }
  return table;
}

void EffectDistributions::validate() const {
  if (min_kps < 0 || max_kps < min_kps) {
    throw ValidationError("KP count range must satisfy 0 <= min_kps <= max_kps");
  }
  if (max_kps > 20) throw ValidationError("max_kps above 20 is not supported");
  auto fraction = [](double f, const char* name) {
    if (!(f >= 0.0 && f <= 1.0)) throw ValidationError(std::string(name) + " must lie in [0, 1]");
  };
  fraction(zero_fraction, "zero_fraction");
  fraction(paradox_fraction, "paradox_fraction");
  if (base_sd < 0 || main_sd < 0 || pair_sd < 0) {
    throw ValidationError("standard deviations must be >= 0");
  }
}

json to_json(const EffectDistributions& e) {
  return json{{"min_kps", e.min_kps},           {"max_kps", e.max_kps},
              {"base_mean", e.base_mean},       {"base_sd", e.base_sd},
              {"main_mean", e.main_mean},       {"main_sd", e.main_sd},
              {"zero_fraction", e.zero_fraction}, {"paradox_fraction", e.paradox_fraction},
              {"pair_mean", e.pair_mean},       {"pair_sd", e.pair_sd}};
}

EffectDistributions effects_from_json(const json& value, EffectDistributions e) {
  if (!value.is_object()) throw ValidationError("effect distributions must be an object");
  for (const auto& [key, field] : value.items()) {
    try {
      if (key == "min_kps") e.min_kps = field.get<int>();
      else if (key == "max_kps") e.max_kps = field.get<int>();
      else if (key == "base_mean") e.base_mean = field.get<double>();
      else if (key == "base_sd") e.base_sd = field.get<double>();
      else if (key == "main_mean") e.main_mean = field.get<double>();
      else if (key == "main_sd") e.main_sd = field.get<double>();
      else if (key == "zero_fraction") e.zero_fraction = field.get<double>();
      else if (key == "paradox_fraction") e.paradox_fraction = field.get<double>();
      else if (key == "pair_mean") e.pair_mean = field.get<double>();
      else if (key == "pair_sd") e.pair_sd = field.get<double>();
      else throw ValidationError("unknown effect key '" + key + "'");
    } catch (const json::exception& ex) {
      throw ValidationError("effect key '" + key + "': " + ex.what());
    }
  }
  return e;
}

Benchmark generate_benchmark(int n_problems, const EffectDistributions& effects,
                             std::uint64_t seed) {
  if (n_problems < 0) throw ValidationError("n_problems must be >= 0");
  effects.validate();
  Benchmark out;
  for (int p = 0; p < n_problems; ++p) {
    const std::string id = problem_name(p);
    Stream rng(hash_combine(seed, id));
    SyntheticWorld world;
    world.problem_id = id;
    world.seed = hash_combine(seed ^ 0x5eed5eed5eed5eedULL, id);
    const int span = effects.max_kps - effects.min_kps + 1;
    world.n_kps = effects.min_kps + std::min(span - 1, static_cast<int>(rng.uniform() * span));
    world.base = rng.normal(effects.base_mean, effects.base_sd);
    for (int i = 0; i < world.n_kps; ++i) {
      const bool zero = rng.uniform() < effects.zero_fraction;
      const double w = rng.normal(effects.main_mean, effects.main_sd);
      world.main_effects.push_back(zero ? 0.0 : w);
    }
    for (int i = 0; i < world.n_kps; ++i) {
      for (int j = i + 1; j < world.n_kps; ++j) {
        const bool plant = rng.uniform() < effects.paradox_fraction;
        const double w = std::min(0.0, rng.normal(effects.pair_mean, effects.pair_sd));
        if (plant && world.main_effects[i] > 0 && world.main_effects[j] > 0) {
          world.pair_effects[{i, j}] = w;
        }
      }
    }

    Problem problem = synthetic_problem(world);
    std::vector<KnowledgePoint> kps = synthetic_kps(world);
    out.dataset.problems.emplace(id, std::move(problem));
    out.dataset.kps.emplace(id, std::move(kps));
    out.worlds.push_back(std::move(world));
  }
  return out;
}

Problem synthetic_problem(const SyntheticWorld& world) {
  Problem problem;
  problem.id = world.problem_id;
  problem.statement = "Synthetic problem " + world.problem_id + ": report the hidden value.";
  problem.gold_answer = std::to_string(100 + hash_combine(world.seed, "answer") % 900);
  return problem;
}

std::vector<KnowledgePoint> synthetic_kps(const SyntheticWorld& world) {
  std::vector<KnowledgePoint> kps;
  for (int i = 0; i < world.n_kps; ++i) {
    const std::string tag = hex64(hash_combine(world.seed, static_cast<std::uint64_t>(i)));
    kps.push_back({world.problem_id, i, "General principle P-" + tag + " for this family of tasks",
                   "Check that the preconditions of P-" + tag + " hold before applying it",
                   KpStatus::verified});
  }
  return kps;
}

json to_json(const SyntheticWorld& world) {
  json pairs = json::array();
  for (const auto& [key, w] : world.pair_effects) pairs.push_back({key.first, key.second, w});
  return json{{"problem_id", world.problem_id}, {"n_kps", world.n_kps},
              {"base", world.base},             {"main_effects", world.main_effects},
              {"pair_effects", pairs},          {"seed", world.seed}};
}

SyntheticWorld world_from_json(const json& record, std::size_t line) {
  SyntheticWorld w;
  try {
    w.problem_id = require_string(record, "problem_id", line);
    w.n_kps = static_cast<int>(require_int(record, "n_kps", line));
    w.base = require_field(record, "base", line).get<double>();
    w.main_effects = require_field(record, "main_effects", line).get<std::vector<double>>();
    for (const auto& p : require_field(record, "pair_effects", line)) {
      const int i = p.at(0).get<int>();
      const int j = p.at(1).get<int>();
      if (!(0 <= i && i < j && j < w.n_kps)) {
        throw ParseError("line " + std::to_string(line) + ": pair effect indices out of order",
                         line);
      }
      w.pair_effects[{i, j}] = p.at(2).get<double>();
    }
    w.seed = require_field(record, "seed", line).get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw ParseError("line " + std::to_string(line) + ": " + e.what(), line);
  }
  if (static_cast<int>(w.main_effects.size()) != w.n_kps) {
    throw ParseError("line " + std::to_string(line) + ": main_effects length differs from n_kps",
                     line);
  }
  return w;
}

void write_worlds(const std::filesystem::path& path, const std::vector<SyntheticWorld>& worlds) {
  JsonlWriter out(path);
  for (const auto& w : worlds) out.write(to_json(w));
}

std::vector<SyntheticWorld> read_worlds(const std::filesystem::path& path) {
  std::vector<SyntheticWorld> worlds;
  for_each_jsonl(path, [&](const json& record, std::size_t line) {
    worlds.push_back(world_from_json(record, line));
  });
  return worlds;
}

SyntheticProvider::SyntheticProvider(std::vector<SyntheticWorld> worlds, SampleMode mode)
    : mode_(mode) {
  for (auto& w : worlds) {
    const std::string id = w.problem_id;
    if (!worlds_.emplace(id, std::move(w)).second) {
      throw ConflictError("duplicate world for problem '" + id + "'");
    }
  }
}

const SyntheticWorld& SyntheticProvider::world(const std::string& problem_id) const {
  auto it = worlds_.find(problem_id);
  if (it == worlds_.end()) throw ValidationError("no world for problem '" + problem_id + "'");
  return it->second;
}

RunCounts SyntheticProvider::evaluate(const EvaluationRequest& request) {
  return sample_rollouts(world(request.problem_id), request.config, request.runs,
                         request.samples_per_run, mode_);
}

ThresholdWorld make_threshold_world(int n_tokens, int jump_token) {
  if (jump_token < 1 || jump_token > n_tokens) {
    throw ValidationError("jump_token must lie in [1, n_tokens]");
  }
  ThresholdWorld world;
  world.jump_token = jump_token;
  world.problem.id = "threshold";
  world.problem.statement = "Threshold problem: report the hidden value.";
  world.problem.gold_answer = "42";
  std::string solution;
  for (int t = 0; t < n_tokens; ++t) {
    if (t) solution += ' ';
    solution += "step" + std::to_string(t + 1);
  }
  world.problem.reference_solution = solution;
  return world;
}

ThresholdPromptEvaluator::ThresholdPromptEvaluator(ThresholdWorld world, SampleMode mode)
    : world_(std::move(world)), mode_(mode) {
  if (!world_.problem.reference_solution) {
    throw ValidationError("threshold world needs a reference solution");
  }
  tokens_ = whitespace_tokens(*world_.problem.reference_solution);
}

double ThresholdPromptEvaluator::logit(const std::string& prompt) const {
  const auto hint = extract_hint_body(prompt);
  const auto revealed = hint ? whitespace_tokens(*hint) : std::vector<std::string>{};
  std::size_t matched = 0;
  while (matched < revealed.size() && matched < tokens_.size() &&
         revealed[matched] == tokens_[matched]) {
    ++matched;
  }
  const bool jumped = static_cast<int>(matched) >= world_.jump_token;
  return world_.base + (jumped ? world_.jump_effect : 0.0);
}

double ThresholdPromptEvaluator::probability(const std::string& prompt) const {
  return sigmoid(logit(prompt));
}

RunCounts ThresholdPromptEvaluator::evaluate_prompt(const Problem& problem,
                                                    const std::string& prompt, int runs,
                                                    int samples_per_run) {
  // A KP-free world whose base logit is the prompt's logit.
  SyntheticWorld proxy;
  proxy.problem_id = problem.id;
  proxy.base = logit(prompt);
  proxy.seed = hash_combine(world_.seed, prompt);
  return sample_rollouts(proxy, Configuration{}, runs, samples_per_run, mode_);
}

SimulatedChatModel::SimulatedChatModel(const std::vector<SyntheticWorld>& worlds) {
  for (const auto& world : worlds) {
    Problem problem = synthetic_problem(world);
    std::string statement = problem.statement;
    by_statement_.emplace(std::move(statement),
                          Entry{std::move(problem), synthetic_kps(world), world});
  }
}

const SimulatedChatModel::Entry& SimulatedChatModel::entry_for_statement(
    std::string_view statement) const {
  auto it = by_statement_.find(std::string(statement));
  if (it == by_statement_.end()) throw EndpointError("simulated model: unknown problem");
  return it->second;
}

std::string SimulatedChatModel::complete(const json& request) {
  const std::string message = request_message(request);
  const std::uint64_t seed = request.value("seed", std::uint64_t{0});

  if (message.find("[Key Knowledge Points]") != std::string::npos) {
    const Entry& e = entry_for_statement(between(message, "[Problem]\n", "\n\n[Correct Solution]"));
    std::string reply = "Here are the key knowledge points.\n\n";
    for (const auto& kp : e.kps) {
      reply += std::to_string(kp.index + 1) + ". (a) " + kp.knowledge + "\n   (b) " +
               kp.considerations + "\n";
    }
    return reply;
  }
  if (message.find("[Knowledge Description]") != std::string::npos) {
    const Entry& e =
        entry_for_statement(between(message, "[Problem]\n", "\n\n[Knowledge Description]"));
    const std::string marker = "[Knowledge Description]\n";
    const auto at = message.find(marker);
    std::string knowledge = message.substr(at + marker.size());
    if (!knowledge.empty() && knowledge.back() == '.') knowledge.pop_back();
    const bool coupled = knowledge.find(e.problem.id) != std::string::npos;
    return "Review complete.\n" +
           json{{"strongly_coupled", coupled},
                {"reason", coupled ? "names the problem" : "general principle"}}
               .dump(4);
  }

  const std::string hint_marker = "\n\n" + std::string(kHintHeader) + "\n";
  const std::string closing = "\n\n" + std::string(kClosingInstruction);
  auto cut = message.find(hint_marker);
  if (cut == std::string::npos) cut = message.rfind(closing);
  if (cut == std::string::npos) throw EndpointError("simulated model: unrecognized prompt");
  const Entry& e = entry_for_statement(std::string_view(message).substr(0, cut));

  std::vector<int> members;
  if (auto body = extract_hint_body(message)) {
    for (const auto& item : parse_hint_block(std::string(kHintHeader) + "\n" + *body)) {
      auto kp = std::find_if(e.kps.begin(), e.kps.end(),
                             [&](const auto& k) { return k.knowledge == item.knowledge; });
      if (kp == e.kps.end()) throw EndpointError("simulated model: unknown hint item");
      members.push_back(kp->index);
    }
  }
  const Configuration config = Configuration::canonicalize(members, e.world.n_kps);
  const double p = true_probability(e.world, config);
  const bool correct = unit_interval(hash_combine(e.world.seed, seed)) < p;
  return "Working through " + e.problem.id + ".\nThe result is \\boxed{" +
         (correct ? e.problem.gold_answer : wrong_answer(e.problem.gold_answer)) + "}.";
}

struct SynthServer::Impl {
  httplib::Server server;
  Provider& provider;
  ChatClient* chat;
  Impl(Provider& p, ChatClient* c) : provider(p), chat(c) {}
};

SynthServer::SynthServer(Provider& provider, ChatClient* chat)
    : impl_(std::make_unique<Impl>(provider, chat)) {
  auto fail = [](httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", message}}.dump(), "application/json");
  };
  impl_->server.Post("/evaluate", [this, fail](const httplib::Request& req,
                                               httplib::Response& res) {
    try {
      const json body = json::parse(req.body);
      EvaluationRequest request;
      request.problem_id = body.at("problem_id").get<std::string>();
      request.config = config_from_json(body.at("config"), 1 << 30, 0);
      request.runs = body.value("runs", 8);
      request.samples_per_run = body.value("samples_per_run", 32);
      const RunCounts counts = impl_->provider.evaluate(request);
      res.set_content(json{{"run_counts", counts}}.dump(), "application/json");
    } catch (const json::exception& e) {
      fail(res, 400, e.what());
    } catch (const Error& e) {
      fail(res, 400, e.what());
    }
  });
  auto chat_handler = [this, fail](const httplib::Request& req, httplib::Response& res) {
    if (!impl_->chat) return fail(res, 404, "no chat model configured");
    try {
      const std::string text = impl_->chat->complete(json::parse(req.body));
      json reply{{"object", "chat.completion"},
                 {"choices", json::array({json{{"index", 0},
                                               {"message", {{"role", "assistant"},
                                                            {"content", text}}},
                                               {"finish_reason", "stop"}}})}};
      res.set_content(reply.dump(), "application/json");
    } catch (const json::exception& e) {
      fail(res, 400, e.what());
    } catch (const Error& e) {
      fail(res, 400, e.what());
    }
  };
  impl_->server.Post("/v1/chat/completions", chat_handler);
  impl_->server.Post("/chat/completions", chat_handler);
}

SynthServer::~SynthServer() { stop(); }

int SynthServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound <= 0) throw Error("could not bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error("could not bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void SynthServer::serve() { impl_->server.listen_after_bind(); }

void SynthServer::stop() {
  if (impl_->server.is_running()) impl_->server.stop();
}

HttpRolloutProvider::HttpRolloutProvider(std::string base_url) : base_url_(std::move(base_url)) {
  split_base_url(base_url_);
}

RunCounts HttpRolloutProvider::evaluate(const EvaluationRequest& request) {
  const auto [origin, path] = split_base_url(base_url_);
  httplib::Client client(origin);
  const json body{{"problem_id", request.problem_id},
                  {"config", request.config.indices()},
                  {"runs", request.runs},
                  {"samples_per_run", request.samples_per_run}};
  auto result = client.Post(path + "/evaluate", body.dump(), "application/json");
  if (!result) {
    throw EndpointError("rollout server unreachable: " + httplib::to_string(result.error()));
  }
  json reply;
  try {
    reply = json::parse(result->body);
  } catch (const json::exception&) {
    throw EndpointError("rollout server returned a non-JSON body");
  }
  if (result->status != 200) {
    throw EndpointError("rollout server error: " + reply.value("error", result->body));
  }
  return reply.at("run_counts").get<RunCounts>();
}

}  // namespace kpsel
