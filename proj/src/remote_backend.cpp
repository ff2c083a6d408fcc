#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <cstdlib>
#include <regex>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "knobtuner/backend.hpp"
#include "knobtuner/errors.hpp"

namespace knobtuner {

using nlohmann::json;

namespace {

std::string env_or_empty(const char* name) {
  const char* v = std::getenv(name);
  return v ? std::string(v) : std::string{};
}

constexpr const char* kSystemMessage =
    "You are an expert in permissioned blockchain performance tuning. "
    "Answer with a single JSON value that follows the requested reply format, without commentary.";

}  // namespace

RemoteOptions RemoteOptions::from_env() {
  RemoteOptions o;
  o.url = env_or_empty("KNOBTUNER_LLM_URL");
  o.model = env_or_empty("KNOBTUNER_LLM_MODEL");
  o.api_key = env_or_empty("KNOBTUNER_LLM_KEY");
  if (o.url.empty() || o.model.empty()) {
    throw Error(ErrorCode::BackendUnavailable, "KNOBTUNER_LLM_URL and KNOBTUNER_LLM_MODEL must be set for the remote backend");
  }
  return o;
}

RemoteBackend::RemoteBackend(RemoteOptions options) : options_(std::move(options)) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(options_.url, m, re)) {
    throw Error(ErrorCode::InvalidArgument, "remote backend URL must look like http(s)://host[:port]/path");
  }
  base_ = m[1];
  path_ = m[2].matched ? std::string(m[2]) : std::string("/v1/chat/completions");
  if (!options_.sleep) options_.sleep = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

json RemoteBackend::post(const json& body) {
  httplib::Client client(base_);
  client.set_connection_timeout(std::chrono::seconds(10));
  client.set_read_timeout(options_.timeout);
  client.set_write_timeout(options_.timeout);
  httplib::Headers headers;
  if (!options_.api_key.empty()) headers.emplace("Authorization", "Bearer " + options_.api_key);

  std::string last_error;
  for (int attempt = 0; attempt <= options_.retries; ++attempt) {
    if (attempt > 0) {
      const auto& backoff = options_.backoff;
      const auto delay = backoff.empty() ? std::chrono::milliseconds(0)
                                         : backoff[std::min<std::size_t>(static_cast<std::size_t>(attempt - 1), backoff.size() - 1)];
      spdlog::warn("remote backend: {}; retrying in {} ms", last_error, delay.count());
      options_.sleep(delay);
    }
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = fmt::format("HTTP {}", res->status);
      continue;
    }
    if (res->status != 200) {
      throw Error(ErrorCode::BackendUnavailable, fmt::format("remote backend returned HTTP {}: {}", res->status, res->body));
    }
    auto reply = json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.is_object()) {
      throw Error(ErrorCode::BackendUnavailable, "remote backend returned a non-JSON body");
    }
    return reply;
  }
  throw Error(ErrorCode::BackendUnavailable,
              fmt::format("remote backend failed after {} retries: {}", options_.retries, last_error));
}

Completion RemoteBackend::do_complete(const std::string& prompt, int n) {
  std::string content = prompt;
  const bool single_reply = !options_.supports_sampling && n > 1;
  if (single_reply) {
    content += fmt::format("\nReturn a JSON array of {} distinct alternative replies, each following the reply format.\n", n);
  }
  const json body = {{"model", options_.model},
                     {"messages", json::array({{{"role", "system"}, {"content", kSystemMessage}},
                                               {{"role", "user"}, {"content", content}}})},
                     {"temperature", options_.temperature},
                     {"n", single_reply ? 1 : n}};
  const json reply = post(body);

  Completion out;
  out.calls = 1;
  if (const auto it = reply.find("choices"); it != reply.end() && it->is_array()) {
    for (const auto& choice : *it) {
      if (choice.contains("message") && choice["message"].contains("content") && choice["message"]["content"].is_string()) {
        out.texts.push_back(choice["message"]["content"].get<std::string>());
      } else if (choice.contains("text") && choice["text"].is_string()) {
        out.texts.push_back(choice["text"].get<std::string>());
      }
    }
  }
  if (out.texts.empty()) throw Error(ErrorCode::BackendUnavailable, "remote reply carries no choices with text");
  if (const auto it = reply.find("usage"); it != reply.end() && it->is_object()) {
    if (it->contains("prompt_tokens")) out.prompt_tokens = (*it)["prompt_tokens"].get<std::uint64_t>();
    if (it->contains("completion_tokens")) out.completion_tokens = (*it)["completion_tokens"].get<std::uint64_t>();
  }
  return out;
}

}  // namespace knobtuner
