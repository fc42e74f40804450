#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "kpsel/chat.hpp"
#include "kpsel/jsonl.hpp"

namespace kpsel::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kPartialFailure = 1;  // some problems failed; see failure report
inline constexpr int kUsage = 2;           // bad flags or config values
inline constexpr int kRuntime = 3;         // unrecoverable error

/// Settings shared by every subcommand. Loaded from a JSON config file, then
/// overridden by flags.
struct CliConfig {
  std::filesystem::path data_dir = "data";
  int runs = 8;
  int samples_per_run = 32;
  double epsilon = 1.0 / 32.0;
  double delta = 1.0 / 32.0;
  bool strict_paper_formula = false;
  int enumeration_cap = 16;
  int exhaustive_cap = 12;
  int paradox_subset_cap = 64;
  std::vector<double> bucket_edges;  // empty: ten equal-width bins
  double injection_threshold = 0.9;
  EndpointConfig endpoint;
  std::uint64_t seed = 0;
  int parallelism = 1;
  int max_attempts = 8;

  void validate() const;
};

/// Every key except data_dir, which locates files but does not change results.
json to_json(const CliConfig& config);
CliConfig config_from_json(const json& value, CliConfig base = {});

/// Hex digest of to_json(config); stamped into every output header.
std::string config_hash(const CliConfig& config);

/// Runs one invocation. `args` excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace kpsel::cli
