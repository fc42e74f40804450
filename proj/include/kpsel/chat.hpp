#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <utility>

#include "kpsel/errors.hpp"
#include "kpsel/jsonl.hpp"

namespace kpsel {

/// Connection and decoding settings for an OpenAI-compatible endpoint.
struct EndpointConfig {
  std::string base_url = "http://127.0.0.1:8000/v1";
  std::string model_name = "default";
  std::string api_key_env_var = "OPENAI_API_KEY";
  double temperature = 0.9;
  double top_p = 0.9;
  int max_tokens = 8192;
  int max_retries = 3;
  double request_timeout = 120.0;  // seconds

  /// Throws ValidationError unless temperature and top_p lie in (0, 1],
  /// retries >= 0, max_tokens >= 1 and the timeout is positive.
  void validate() const;
};

json to_json(const EndpointConfig& config);
/// Overlays the keys present in `value` onto `base`. Unknown keys are errors.
EndpointConfig endpoint_from_json(const json& value, EndpointConfig base = {});

/// Endpoint unreachable, refused the request, or returned an unusable body.
class EndpointError : public Error {
 public:
  using Error::Error;
};

/// Chat-completion request body: one user message plus decoding parameters.
/// `seed` is forwarded when set so every sample is individually addressable.
json build_chat_request(const EndpointConfig& config, std::string_view user_message,
                        std::optional<std::uint64_t> seed = std::nullopt);

/// Splits "http://host:port/base/path" into origin ("http://host:port") and
/// path ("/base/path", without trailing slashes). Throws ValidationError when
/// the scheme is missing.
std::pair<std::string, std::string> split_base_url(const std::string& base_url);

/// Text of the first user message in a request body built above.
std::string request_message(const json& request);

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  /// Returns the first choice's message content. Throws EndpointError.
  virtual std::string complete(const json& request) = 0;
};

/// Adapts a callable; handy for in-process models and test doubles.
class CallbackChatClient final : public ChatClient {
 public:
  using Fn = std::function<std::string(const json&)>;
  explicit CallbackChatClient(Fn fn) : fn_(std::move(fn)) {}
  std::string complete(const json& request) override { return fn_(request); }

 private:
  Fn fn_;
};

/// POSTs to `{base_url}/chat/completions`. Transport failures, 429 and 5xx
/// responses are retried up to `max_retries` times with exponential backoff
/// (retry k waits base_backoff * 2^(k-1)); other statuses fail at once. The bearer
/// token is read from `api_key_env_var` when that variable is set.
class HttpChatClient final : public ChatClient {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit HttpChatClient(EndpointConfig config,
                          std::chrono::milliseconds base_backoff = std::chrono::milliseconds(500),
                          Sleeper sleeper = {});

  std::string complete(const json& request) override;

 private:
  EndpointConfig config_;
  std::string origin_;  // scheme://host[:port]
  std::string path_;    // base path + "/chat/completions"
  std::chrono::milliseconds base_backoff_;
  Sleeper sleeper_;
};

/// Consumes `choices[0].message.content` from a response body.
std::string parse_chat_response(const std::string& body);

/// Forwards to an inner client and appends one line per exchange:
/// {"request": ..., "response": "..."} or {"request": ..., "error": "..."}.
class TranscriptRecorder final : public ChatClient {
 public:
  TranscriptRecorder(ChatClient& inner, const std::filesystem::path& path);
  std::string complete(const json& request) override;

 private:
  ChatClient& inner_;
  std::mutex mutex_;
  JsonlWriter writer_;
};

/// Serves recorded exchanges without network access. Requests are matched
/// by their exact JSON body; repeated bodies are answered in recording order.
/// An unrecorded request raises EndpointError, as does a recorded error.
class TranscriptReplayer final : public ChatClient {
 public:
  explicit TranscriptReplayer(const std::filesystem::path& path);
  std::string complete(const json& request) override;

  std::size_t remaining() const;

 private:
  struct Exchange {
    std::optional<std::string> response;
    std::string error;
  };
  mutable std::mutex mutex_;
  std::map<std::string, std::deque<Exchange>> exchanges_;
};

}  // namespace kpsel
