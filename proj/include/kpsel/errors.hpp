#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace kpsel {

// Every error raised by the library derives from Error so callers that only
// want to report failures can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

// A configuration was needed but has no cell in the accuracy table.
class NotEvaluatedError : public Error {
 public:
  NotEvaluatedError(std::string problem_id, std::vector<std::string> missing);

  const std::string& problem_id() const { return problem_id_; }
  const std::vector<std::string>& missing() const { return missing_; }

 private:
  std::string problem_id_;
  std::vector<std::string> missing_;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

class IntegrityError : public Error {
 public:
  using Error::Error;
};

class CapExceededError : public Error {
 public:
  using Error::Error;
};

// Malformed input line or model reply. `line` is 1-based, 0 when not
// applicable.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line = 0, std::string raw = {})
      : Error(what), line_(line), raw_(std::move(raw)) {}

  std::size_t line() const { return line_; }
  const std::string& raw() const { return raw_; }

 private:
  std::size_t line_;
  std::string raw_;
};

}  // namespace kpsel
