#include "kpsel/chat.hpp"

#include <cstdlib>
#include <thread>

#include "httplib.h"

namespace kpsel {

void EndpointConfig::validate() const {
  if (base_url.empty()) throw ValidationError("endpoint base_url is empty");
  if (!(temperature > 0.0 && temperature <= 1.0)) {
    throw ValidationError("endpoint temperature must lie in (0, 1], got " +
                          std::to_string(temperature));
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    throw ValidationError("endpoint top_p must lie in (0, 1], got " + std::to_string(top_p));
  }
  if (max_retries < 0) throw ValidationError("endpoint max_retries must be >= 0");
  if (max_tokens < 1) throw ValidationError("endpoint max_tokens must be >= 1");
  if (!(request_timeout > 0.0)) throw ValidationError("endpoint request_timeout must be > 0");
}

json to_json(const EndpointConfig& config) {
  return json{{"base_url", config.base_url},
              {"model_name", config.model_name},
              {"api_key_env_var", config.api_key_env_var},
              {"temperature", config.temperature},
              {"top_p", config.top_p},
              {"max_tokens", config.max_tokens},
              {"max_retries", config.max_retries},
              {"request_timeout", config.request_timeout}};
}

EndpointConfig endpoint_from_json(const json& value, EndpointConfig base) {
  if (!value.is_object()) throw ValidationError("endpoint config must be an object");
  for (const auto& [key, field] : value.items()) {
    try {
      if (key == "base_url") {
        base.base_url = field.get<std::string>();
      } else if (key == "model_name") {
        base.model_name = field.get<std::string>();
      } else if (key == "api_key_env_var") {
        base.api_key_env_var = field.get<std::string>();
      } else if (key == "temperature") {
        base.temperature = field.get<double>();
      } else if (key == "top_p") {
        base.top_p = field.get<double>();
      } else if (key == "max_tokens") {
        base.max_tokens = field.get<int>();
      } else if (key == "max_retries") {
        base.max_retries = field.get<int>();
      } else if (key == "request_timeout") {
        base.request_timeout = field.get<double>();
      } else {
        throw ValidationError("unknown endpoint key '" + key + "'");
      }
    } catch (const json::exception& e) {
      throw ValidationError("endpoint key '" + key + "': " + e.what());
    }
  }
  return base;
}

json build_chat_request(const EndpointConfig& config, std::string_view user_message,
                        std::optional<std::uint64_t> seed) {
  json body{{"model", config.model_name},
            {"messages", json::array({json{{"role", "user"}, {"content", user_message}}})},
            {"temperature", config.temperature},
            {"top_p", config.top_p},
            {"max_tokens", config.max_tokens}};
  if (seed) body["seed"] = *seed;
  return body;
}

std::pair<std::string, std::string> split_base_url(const std::string& base_url) {
  const auto scheme_end = base_url.find("://");
  if (scheme_end == std::string::npos) {
    throw ValidationError("base url must include a scheme: " + base_url);
  }
  const auto path_start = base_url.find('/', scheme_end + 3);
  std::string path = path_start == std::string::npos ? std::string() : base_url.substr(path_start);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {base_url.substr(0, path_start), path};
}

std::string request_message(const json& request) {
  const auto messages = request.find("messages");
  if (messages == request.end() || !messages->is_array()) {
    throw ValidationError("chat request lacks a messages array");
  }
  for (const auto& message : *messages) {
    if (message.value("role", "") == "user") return message.at("content").get<std::string>();
  }
  throw ValidationError("chat request has no user message");
}

std::string parse_chat_response(const std::string& body) {
  json parsed;
  try {
    parsed = json::parse(body);
  } catch (const json::exception& e) {
    throw EndpointError(std::string("response is not JSON: ") + e.what());
  }
  try {
    return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    throw EndpointError("response lacks choices[0].message.content");
  }
}

HttpChatClient::HttpChatClient(EndpointConfig config, std::chrono::milliseconds base_backoff,
                               Sleeper sleeper)
    : config_(std::move(config)), base_backoff_(base_backoff), sleeper_(std::move(sleeper)) {
  config_.validate();
  auto [origin, base_path] = split_base_url(config_.base_url);
  origin_ = std::move(origin);
  path_ = base_path + "/chat/completions";
  if (!sleeper_) sleeper_ = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

std::string HttpChatClient::complete(const json& request) {
  httplib::Client client(origin_);
  const auto seconds = static_cast<time_t>(config_.request_timeout);
  const auto micros = static_cast<time_t>((config_.request_timeout - seconds) * 1e6);
  client.set_connection_timeout(seconds, micros);
  client.set_read_timeout(seconds, micros);
  client.set_write_timeout(seconds, micros);

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env_var.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  const std::string body = request.dump();

  std::string last_error;
  for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
    if (attempt > 0) sleeper_(base_backoff_ * (1LL << (attempt - 1)));
    auto result = client.Post(path_, headers, body, "application/json");
    if (!result) {
      last_error = "transport error: " + httplib::to_string(result.error());
      continue;
    }
    if (result->status == 200) return parse_chat_response(result->body);
    last_error = "HTTP " + std::to_string(result->status) + ": " + result->body.substr(0, 200);
    if (result->status != 429 && result->status < 500) break;
  }
  throw EndpointError("chat completion failed after " + std::to_string(config_.max_retries + 1) +
                      " attempt(s): " + last_error);
}

TranscriptRecorder::TranscriptRecorder(ChatClient& inner, const std::filesystem::path& path)
    : inner_(inner), writer_(path, JsonlWriter::Mode::append) {}

std::string TranscriptRecorder::complete(const json& request) {
  try {
    std::string response = inner_.complete(request);
    std::lock_guard lock(mutex_);
    writer_.write(json{{"request", request}, {"response", response}});
    return response;
  } catch (const Error& e) {
    std::lock_guard lock(mutex_);
    writer_.write(json{{"request", request}, {"error", e.what()}});
    throw;
  }
}

TranscriptReplayer::TranscriptReplayer(const std::filesystem::path& path) {
  for_each_jsonl(path, [&](const json& record, std::size_t line) {
    const json& request = require_field(record, "request", line);
    Exchange exchange;
    if (record.contains("response")) {
      exchange.response = require_string(record, "response", line);
    } else {
      exchange.error = require_string(record, "error", line);
    }
    exchanges_[request.dump()].push_back(std::move(exchange));
  });
}

std::string TranscriptReplayer::complete(const json& request) {
  std::lock_guard lock(mutex_);
  auto it = exchanges_.find(request.dump());
  if (it == exchanges_.end() || it->second.empty()) {
    throw EndpointError("no recorded response for request");
  }
  Exchange exchange = std::move(it->second.front());
  it->second.pop_front();
  if (!exchange.response) throw EndpointError("recorded failure: " + exchange.error);
  return *exchange.response;
}

std::size_t TranscriptReplayer::remaining() const {
  std::lock_guard lock(mutex_);
  std::size_t total = 0;
  for (const auto& [key, queue] : exchanges_) total += queue.size();
  return total;
}

}  // namespace kpsel
