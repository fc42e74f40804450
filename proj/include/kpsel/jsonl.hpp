#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <string>

#include "json.hpp"

namespace kpsel {

using json = nlohmann::json;

/// Calls `fn(record, line_number)` for every non-blank line. Lines holding a
/// top-level "header" or "summary" object are provenance records and are
/// skipped. Throws ParseError carrying the 1-based line number.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, std::size_t)>& fn);

/// Same as for_each_jsonl over an in-memory buffer.
void for_each_jsonl_text(const std::string& text,
                         const std::function<void(const json&, std::size_t)>& fn);

std::string read_file(const std::filesystem::path& path);

// Field accessors raising ParseError with the offending line.
const json& require_field(const json& record, const char* name, std::size_t line);
std::string require_string(const json& record, const char* name, std::size_t line);
long long require_int(const json& record, const char* name, std::size_t line);

/// Appends compact one-line JSON records, flushing after each write.
class JsonlWriter {
 public:
  enum class Mode { truncate, append };
  explicit JsonlWriter(const std::filesystem::path& path, Mode mode = Mode::truncate);

  void write(const json& record);

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

}  // namespace kpsel
