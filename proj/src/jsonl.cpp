#include "kpsel/jsonl.hpp"

#include <cstdio>
#include <sstream>

#include "kpsel/errors.hpp"
#include "kpsel/hash.hpp"

namespace kpsel {

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void for_each_jsonl_text(const std::string& text,
                         const std::function<void(const json&, std::size_t)>& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError("line " + std::to_string(line_no) + ": malformed JSON: " + e.what(),
                       line_no, line);
    }
    if (!record.is_object()) {
      throw ParseError("line " + std::to_string(line_no) + ": record is not an object", line_no,
                       line);
    }
    if (record.size() == 1 && (record.contains("header") || record.contains("summary"))) {
      continue;
    }
    fn(record, line_no);
  }
}

void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(const json&, std::size_t)>& fn) {
  for_each_jsonl_text(read_file(path), fn);
}

const json& require_field(const json& record, const char* name, std::size_t line) {
  auto it = record.find(name);
  if (it == record.end()) {
    throw ParseError("line " + std::to_string(line) + ": missing field '" + name + "'", line);
  }
  return *it;
}

std::string require_string(const json& record, const char* name, std::size_t line) {
  const json& v = require_field(record, name, line);
  if (!v.is_string()) {
    throw ParseError("line " + std::to_string(line) + ": field '" + name + "' must be a string",
                     line);
  }
  return v.get<std::string>();
}

long long require_int(const json& record, const char* name, std::size_t line) {
  const json& v = require_field(record, name, line);
  if (!v.is_number_integer()) {
    throw ParseError("line " + std::to_string(line) + ": field '" + name + "' must be an integer",
                     line);
  }
  return v.get<long long>();
}

JsonlWriter::JsonlWriter(const std::filesystem::path& path, Mode mode) : path_(path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, mode == Mode::append ? std::ios::app | std::ios::binary
                                       : std::ios::trunc | std::ios::binary);
  if (!out_) throw ValidationError("cannot open '" + path.string() + "' for writing");
}

void JsonlWriter::write(const json& record) {
  out_ << record.dump(-1, ' ', false, json::error_handler_t::strict) << '\n';
  out_.flush();
  if (!out_) throw Error("write to '" + path_.string() + "' failed");
}

}  // namespace kpsel
