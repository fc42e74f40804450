#include "kpsel/curation.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <regex>
#include <thread>

#include "kpsel/hash.hpp"

namespace kpsel {

namespace {

std::string collapse_whitespace(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += c;
  }
  return out;
}

// Drops markdown emphasis and label punctuation around an item part.
std::string clean_part(std::string_view text) {
  std::string out = collapse_whitespace(text);
  auto strip = [](char c) { return c == '*' || c == ':' || c == ' ' || c == '-'; };
  std::size_t start = 0;
  while (start < out.size() && strip(out[start])) ++start;
  std::size_t end = out.size();
  while (end > start && (out[end - 1] == '*' || out[end - 1] == ' ')) --end;
  return out.substr(start, end - start);
}

}  // namespace

std::uint64_t request_seed(std::uint64_t seed, std::string_view purpose,
                           std::string_view problem_id, std::string_view item, int run,
                           int sample) {
  std::uint64_t h = hash_combine(seed, purpose);
  h = hash_combine(h, problem_id);
  h = hash_combine(h, item);
  h = hash_combine(h, static_cast<std::uint64_t>(run));
  h = hash_combine(h, static_cast<std::uint64_t>(sample));
  // Exactly representable as a JSON number in every client.
  return h & ((1ULL << 53) - 1);
}

UnsolvedError::UnsolvedError(std::string problem_id, int attempts)
    : Error("problem '" + problem_id + "' unsolved after " + std::to_string(attempts) +
            " attempt(s)"),
      problem_id_(std::move(problem_id)),
      attempts_(attempts) {}

SolutionResult generate_solution(Problem& problem, ChatClient& client,
                                 const PipelineOptions& options) {
  if (options.max_attempts < 1) throw ValidationError("max_attempts must be >= 1");
  const std::string prompt = emit_prompt(problem, "");
  for (int attempt = 1; attempt <= options.max_attempts; ++attempt) {
    const auto seed = request_seed(options.seed, "solve", problem.id, "", 0, attempt - 1);
    std::string response =
        client.complete(build_chat_request(options.endpoint, prompt, seed));
    if (options.matcher(response, problem.gold_answer)) {
      problem.reference_solution = response;
      return {std::move(response), attempt};
    }
  }
  throw UnsolvedError(problem.id, options.max_attempts);
}

std::vector<ExtractedItem> parse_kp_list(std::string_view reply) {
  static const std::regex item_start(R"(^\s*(?:\*\*)?\s*(\d+)\s*[.)]\s*(?:\*\*)?\s*(.*)$)");
  std::vector<std::string> items;
  std::size_t pos = 0;
  while (pos <= reply.size()) {
    std::size_t end = reply.find('\n', pos);
    if (end == std::string_view::npos) end = reply.size();
    const std::string line(reply.substr(pos, end - pos));
    std::smatch m;
    if (std::regex_match(line, m, item_start)) {
      items.push_back(m[2].str());
    } else if (!items.empty()) {
      items.back() += '\n';
      items.back() += line;
    }
    pos = end + 1;
  }
  if (items.empty()) {
    throw ParseError("extraction reply contains no numbered items", 0, std::string(reply));
  }

  std::vector<ExtractedItem> out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string& text = items[i];
    const std::string label = "item " + std::to_string(i + 1);
    const auto b = text.find("(b)");
    if (b == std::string::npos) {
      throw ParseError("extraction reply: " + label + " lacks part (b)", 0, std::string(reply));
    }
    const auto a = text.find("(a)");
    const std::size_t k_start = (a != std::string::npos && a < b) ? a + 3 : 0;
    ExtractedItem item{clean_part(std::string_view(text).substr(k_start, b - k_start)),
                       clean_part(std::string_view(text).substr(b + 3))};
    if (item.knowledge.empty()) {
      throw ParseError("extraction reply: " + label + " has an empty part (a)", 0,
                       std::string(reply));
    }
    if (item.considerations.empty()) {
      throw ParseError("extraction reply: " + label + " has an empty part (b)", 0,
                       std::string(reply));
    }
    out.push_back(std::move(item));
  }
  return out;
}

std::vector<KnowledgePoint> extract_kps(const Problem& problem, std::string_view solution,
                                        ChatClient& client, const PipelineOptions& options) {
  const std::string prompt = render_extraction_prompt(problem.statement, solution);
  const auto seed = request_seed(options.seed, "extract", problem.id, "", 0, 0);
  const std::string reply = client.complete(build_chat_request(options.endpoint, prompt, seed));
  std::vector<KnowledgePoint> kps;
  for (auto& item : parse_kp_list(reply)) {
    kps.push_back({problem.id, static_cast<int>(kps.size()), std::move(item.knowledge),
                   std::move(item.considerations), KpStatus::raw});
  }
  return kps;
}

std::optional<std::string> first_brace_block(std::string_view text) {
  const auto open = text.find('{');
  if (open == std::string_view::npos) return std::nullopt;
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}' && --depth == 0) {
      return std::string(text.substr(open, i - open + 1));
    }
  }
  return std::nullopt;
}

LeakageVerdict parse_leakage_verdict(std::string_view reply, const std::string& problem_id,
                                     int kp_index) {
  const std::string where = "leakage verdict for problem '" + problem_id + "' KP " +
                            std::to_string(kp_index) + ": ";
  const auto block = first_brace_block(reply);
  if (!block) throw ParseError(where + "reply has no brace block", 0, std::string(reply));
  json parsed;
  try {
    parsed = json::parse(*block);
  } catch (const json::exception&) {
    throw ParseError(where + "brace block is not valid JSON", 0, std::string(reply));
  }
  if (!parsed.is_object() || !parsed.contains("strongly_coupled") ||
      !parsed["strongly_coupled"].is_boolean()) {
    throw ParseError(where + "'strongly_coupled' must be a boolean", 0, std::string(reply));
  }
  if (!parsed.contains("reason") || !parsed["reason"].is_string()) {
    throw ParseError(where + "'reason' must be a string", 0, std::string(reply));
  }
  return {problem_id, kp_index, parsed["strongly_coupled"].get<bool>(),
          parsed["reason"].get<std::string>()};
}

LeakageVerdict verify_leakage(const Problem& problem, KnowledgePoint& kp, ChatClient& client,
                              const PipelineOptions& options) {
  const std::string prompt = render_leakage_prompt(problem.statement, kp.knowledge);
  const auto seed =
      request_seed(options.seed, "leakage", problem.id, std::to_string(kp.index), 0, 0);
  const std::string reply = client.complete(build_chat_request(options.endpoint, prompt, seed));
  LeakageVerdict verdict = parse_leakage_verdict(reply, problem.id, kp.index);
  kp.status = verdict.strongly_coupled ? KpStatus::needs_revision : KpStatus::verified;
  return verdict;
}

ProgressLog::ProgressLog(std::filesystem::path path) : path_(std::move(path)) {
  if (!std::filesystem::exists(path_)) return;
  for_each_jsonl(path_, [&](const json& record, std::size_t line) {
    const std::string id = require_string(record, "problem_id", line);
    const Configuration config = config_from_json(require_field(record, "config", line),
                                                  1 << 30, line);
    const int run = static_cast<int>(require_int(record, "run", line));
    const int sample = static_cast<int>(require_int(record, "sample", line));
    const json& correct = require_field(record, "correct", line);
    if (!correct.is_boolean()) throw ParseError("correct must be a boolean", line);
    done_[{id, config}][{run, sample}] = correct.get<bool>();
  });
}

bool ProgressLog::contains(const std::string& problem_id, const Configuration& config, int run,
                           int sample) const {
  std::lock_guard lock(mutex_);
  auto it = done_.find({problem_id, config});
  return it != done_.end() && it->second.count({run, sample}) != 0;
}

void ProgressLog::record(const RolloutRecord& r) {
  std::lock_guard lock(mutex_);
  JsonlWriter out(path_, JsonlWriter::Mode::append);
  out.write(json{{"problem_id", r.problem_id},
                 {"config", r.config.indices()},
                 {"run", r.run},
                 {"sample", r.sample},
                 {"correct", r.correct}});
  done_[{r.problem_id, r.config}][{r.run, r.sample}] = r.correct;
}

std::map<std::pair<int, int>, bool> ProgressLog::outcomes(const std::string& problem_id,
                                                          const Configuration& config) const {
  std::lock_guard lock(mutex_);
  auto it = done_.find({problem_id, config});
  return it == done_.end() ? std::map<std::pair<int, int>, bool>{} : it->second;
}

PartialRunError::PartialRunError(const std::string& what, std::string problem_id,
                                 Configuration config, int run, int sample,
                                 std::size_t completed)
    : Error(what),
      problem_id_(std::move(problem_id)),
      config_(std::move(config)),
      run_(run),
      sample_(sample),
      completed_(completed) {}

std::string configuration_prompt(const Problem& problem, std::span<const KnowledgePoint> kps,
                                 const Configuration& config) {
  std::vector<KnowledgePoint> chosen;
  for (int index : config) {
    if (index < 0 || static_cast<std::size_t>(index) >= kps.size()) {
      throw ValidationError("problem '" + problem.id + "': configuration " + config.key() +
                            " names a KP that does not exist");
    }
    chosen.push_back(kps[static_cast<std::size_t>(index)]);
  }
  return emit_prompt(problem, emit_hint_block(chosen));
}

RunCounts evaluate_config(const Problem& problem, std::span<const KnowledgePoint> kps,
                          const Configuration& config, ChatClient& client,
                          const PipelineOptions& options, int runs, int samples_per_run,
                          ProgressLog* log) {
  if (runs < 1 || samples_per_run < 1) {
    throw ValidationError("runs and samples_per_run must be at least 1");
  }
  const std::string prompt = configuration_prompt(problem, kps, config);
  const std::string key = config.key();
  const std::size_t total = static_cast<std::size_t>(runs) * samples_per_run;

  // -1 unscored, 0 wrong, 1 correct; run-major.
  std::vector<signed char> outcome(total, -1);
  if (log) {
    for (const auto& [slot, correct] : log->outcomes(problem.id, config)) {
      const auto [run, sample] = slot;
      if (run < runs && sample < samples_per_run) {
        outcome[static_cast<std::size_t>(run) * samples_per_run + sample] = correct ? 1 : 0;
      }
    }
  }
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < total; ++i) {
    if (outcome[i] < 0) pending.push_back(i);
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mutex;
  std::string first_error;
  auto worker = [&] {
    while (!failed.load()) {
      const std::size_t job = next.fetch_add(1);
      if (job >= pending.size()) return;
      const std::size_t slot = pending[job];
      const int run = static_cast<int>(slot / samples_per_run);
      const int sample = static_cast<int>(slot % samples_per_run);
      try {
        const auto seed = request_seed(options.seed, "eval", problem.id, key, run, sample);
        const std::string response =
            client.complete(build_chat_request(options.endpoint, prompt, seed));
        const bool correct = options.matcher(response, problem.gold_answer);
        if (log) log->record({problem.id, config, run, sample, correct});
        outcome[slot] = correct ? 1 : 0;
      } catch (const std::exception& e) {
        std::lock_guard lock(error_mutex);
        if (!failed.exchange(true)) first_error = e.what();
        return;
      }
    }
  };
  const int workers = std::clamp(options.parallelism, 1, static_cast<int>(std::max<std::size_t>(
                                                             pending.size(), 1)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }

  if (failed.load()) {
    std::size_t completed = 0;
    std::size_t cursor = total;
    for (std::size_t i = 0; i < total; ++i) {
      if (outcome[i] >= 0) {
        ++completed;
      } else if (cursor == total) {
        cursor = i;
      }
    }
    const int run = static_cast<int>(cursor / samples_per_run);
    const int sample = static_cast<int>(cursor % samples_per_run);
    throw PartialRunError("problem '" + problem.id + "' config " + key + " interrupted at run " +
                              std::to_string(run) + " sample " + std::to_string(sample) + ": " +
                              first_error,
                          problem.id, config, run, sample, completed);
  }

  RunCounts counts(static_cast<std::size_t>(runs), 0);
  for (std::size_t i = 0; i < total; ++i) counts[i / samples_per_run] += outcome[i];
  return counts;
}

EndpointProvider::EndpointProvider(const Dataset& dataset, ChatClient& client,
                                   PipelineOptions options, ProgressLog* log)
    : dataset_(dataset), client_(client), options_(std::move(options)), log_(log) {}

RunCounts EndpointProvider::evaluate(const EvaluationRequest& request) {
  auto problem = dataset_.problems.find(request.problem_id);
  if (problem == dataset_.problems.end()) {
    throw ValidationError("no problem record for '" + request.problem_id + "'");
  }
  static const std::vector<KnowledgePoint> none;
  auto kps = dataset_.kps.find(request.problem_id);
  const auto& list = kps == dataset_.kps.end() ? none : kps->second;
  return evaluate_config(problem->second, list, request.config, client_, options_,
                         request.runs, request.samples_per_run, log_);
}

EndpointPromptEvaluator::EndpointPromptEvaluator(ChatClient& client, PipelineOptions options)
    : client_(client), options_(std::move(options)) {}

RunCounts EndpointPromptEvaluator::evaluate_prompt(const Problem& problem,
                                                   const std::string& prompt, int runs,
                                                   int samples_per_run) {
  const std::string item = hex64(fnv1a64(prompt));
  RunCounts counts(static_cast<std::size_t>(runs), 0);
  for (int run = 0; run < runs; ++run) {
    for (int sample = 0; sample < samples_per_run; ++sample) {
      const auto seed = request_seed(options_.seed, "prompt", problem.id, item, run, sample);
      const std::string response =
          client_.complete(build_chat_request(options_.endpoint, prompt, seed));
      if (options_.matcher(response, problem.gold_answer)) ++counts[static_cast<std::size_t>(run)];
    }
  }
  return counts;
}

std::size_t CurationReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(entries.begin(), entries.end(), [](const auto& e) { return !e.error.empty(); }));
}

json to_json(const CurationEntry& entry) {
  json out{{"problem_id", entry.problem_id},
           {"solution_attempts", entry.solution_attempts},
           {"extracted", entry.extracted},
           {"verified", entry.verified},
           {"needs_revision", entry.needs_revision}};
  out["error"] = entry.error.empty() ? json(nullptr) : json(entry.error);
  return out;
}

CurationReport curate(Dataset& dataset, ChatClient& client, const PipelineOptions& options) {
  std::vector<std::string> todo;
  for (const auto& [id, problem] : dataset.problems) {
    const auto& kps = dataset.kps[id];  // created here, never inside workers
    const bool has_raw = std::any_of(kps.begin(), kps.end(),
                                     [](const auto& kp) { return kp.status == KpStatus::raw; });
    if (kps.empty() || has_raw) todo.push_back(id);
  }

  CurationReport report;
  report.entries.resize(todo.size());
  auto process = [&](std::size_t slot) {
    const std::string& id = todo[slot];
    CurationEntry& entry = report.entries[slot];
    entry.problem_id = id;
    Problem& problem = dataset.problems.at(id);
    std::vector<KnowledgePoint>& kps = dataset.kps.at(id);
    try {
      if (kps.empty()) {
        if (!problem.reference_solution) {
          entry.solution_attempts = generate_solution(problem, client, options).attempts;
        }
        kps = extract_kps(problem, *problem.reference_solution, client, options);
        entry.extracted = static_cast<int>(kps.size());
      }
    } catch (const std::exception& e) {
      entry.error = e.what();
      return;
    }
    std::vector<std::string> review_errors;
    for (auto& kp : kps) {
      if (kp.status != KpStatus::raw) continue;
      try {
        const auto verdict = verify_leakage(problem, kp, client, options);
        ++(verdict.strongly_coupled ? entry.needs_revision : entry.verified);
      } catch (const std::exception& e) {
        review_errors.push_back(e.what());
      }
    }
    for (const auto& message : review_errors) {
      entry.error += (entry.error.empty() ? "" : "; ") + message;
    }
  };

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t slot = next.fetch_add(1); slot < todo.size(); slot = next.fetch_add(1)) {
      process(slot);
    }
  };
  const int workers = std::clamp(options.parallelism, 1, std::max(1, static_cast<int>(todo.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  for (auto it = dataset.kps.begin(); it != dataset.kps.end();) {
    it = it->second.empty() ? dataset.kps.erase(it) : std::next(it);
  }
  return report;
}

json to_json(const ExportSummary& summary) {
  return json{{"exported", summary.exported},
              {"hinted", summary.hinted},
              {"skipped", summary.skipped},
              {"mean_selected_kps", summary.mean_selected_kps},
              {"mean_all_kps", summary.mean_all_kps},
              {"reduction_percent", summary.reduction_percent}};
}

double reduction_percent(double mean_selected, double mean_all) {
  if (mean_all <= 0.0) return 0.0;
  return std::round(1000.0 * (1.0 - mean_selected / mean_all)) / 10.0;
}

ExportResult export_training_data(const Dataset& dataset,
                                  const std::vector<SelectionOutcome>& selections,
                                  const ExportOptions& options) {
  std::map<std::string, const SelectionOutcome*> by_id;
  ExportResult result;
  for (const auto& outcome : selections) {
    if (!by_id.emplace(outcome.problem_id, &outcome).second) {
      throw ConflictError("duplicate selection for problem '" + outcome.problem_id + "'");
    }
    if (dataset.problems.count(outcome.problem_id) == 0) {
      result.skipped.push_back({outcome.problem_id, "selection names an unknown problem"});
    }
  }

  std::size_t selected_total = 0;
  std::size_t all_total = 0;
  for (const auto& [id, problem] : dataset.problems) {
    auto sel = by_id.find(id);
    if (sel == by_id.end()) {
      result.skipped.push_back({id, "missing selection"});
      continue;
    }
    const Configuration& selected = sel->second->selected;
    static const std::vector<KnowledgePoint> none;
    auto kp_it = dataset.kps.find(id);
    const auto& kps = kp_it == dataset.kps.end() ? none : kp_it->second;
    if (!selected.empty() && static_cast<std::size_t>(selected.indices().back()) >= kps.size()) {
      result.skipped.push_back({id, "selection " + selected.key() + " exceeds the KP list"});
      continue;
    }

    bool hinted = false;
    if (!selected.empty()) {
      auto table = dataset.tables.find(id);
      if (table == dataset.tables.end() || !table->second.contains(Configuration{})) {
        result.skipped.push_back({id, "no-KP accuracy not evaluated"});
        continue;
      }
      hinted = table->second.pooled_accuracy(Configuration{}) < options.injection_threshold;
    }

    std::string prompt;
    try {
      prompt = hinted ? configuration_prompt(problem, kps, selected) : emit_prompt(problem, "");
    } catch (const ValidationError& e) {
      result.skipped.push_back({id, e.what()});
      continue;
    }
    result.records.push_back(json{{"id", id},
                                  {"prompt", prompt},
                                  {"answer", problem.gold_answer},
                                  {"selected", selected.indices()},
                                  {"hinted", hinted}});
    selected_total += selected.size();
    all_total += kps.size();
    if (hinted) ++result.summary.hinted;
  }

  std::sort(result.skipped.begin(), result.skipped.end(),
            [](const auto& a, const auto& b) { return a.problem_id < b.problem_id; });
  auto& s = result.summary;
  s.exported = result.records.size();
  s.skipped = result.skipped.size();
  if (s.exported > 0) {
    s.mean_selected_kps = static_cast<double>(selected_total) / static_cast<double>(s.exported);
    s.mean_all_kps = static_cast<double>(all_total) / static_cast<double>(s.exported);
  }
  s.reduction_percent = reduction_percent(s.mean_selected_kps, s.mean_all_kps);
  return result;
}

}  // namespace kpsel
