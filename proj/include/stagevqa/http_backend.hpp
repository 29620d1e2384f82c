#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "stagevqa/backend.hpp"
#include "stagevqa/error.hpp"
#include "stagevqa/metrics.hpp"

namespace stagevqa {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path = "/";

  static Endpoint parse(std::string_view url) {
    const std::size_t scheme = url.find("://");
    if (scheme == std::string_view::npos || url.substr(0, scheme) != "http")
      throw UsageError("endpoint must be an http:// URL, got '" + std::string(url) + "'");
    const std::size_t slash = url.find('/', scheme + 3);
    Endpoint e;
    e.origin = std::string(url.substr(0, slash));
    if (slash != std::string_view::npos) e.path = std::string(url.substr(slash));
    if (e.origin.size() <= scheme + 3) throw UsageError("endpoint lacks a host: '" + std::string(url) + "'");
    return e;
  }
};

struct HttpOptions {
  std::chrono::milliseconds timeout{60000};
  int transport_retries = 2;
  std::chrono::milliseconds retry_delay{200};
  std::size_t max_in_flight = 4;
};

namespace detail {

/// POSTs JSON; connection failures are retried, HTTP errors are not.
inline nlohmann::json post_json(const Endpoint& ep, const HttpOptions& opt, const nlohmann::json& body) {
  const std::string payload = body.dump();
  std::string last;
  for (int attempt = 0; attempt <= opt.transport_retries; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(opt.retry_delay);
    httplib::Client cli(ep.origin);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(opt.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(opt.timeout - secs);
    cli.set_connection_timeout(secs.count(), usecs.count());
    cli.set_read_timeout(secs.count(), usecs.count());
    cli.set_write_timeout(secs.count(), usecs.count());
    auto res = cli.Post(ep.path, payload, "application/json");
    if (!res) {
      last = httplib::to_string(res.error());
      continue;
    }
    if (res->status < 200 || res->status >= 300)
      throw BackendError(ep.origin + ep.path + " answered HTTP " + std::to_string(res->status));
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(ep.origin + ep.path + " returned invalid JSON: " + e.what());
    }
  }
  throw BackendError(ep.origin + ep.path + " unreachable after " +
                     std::to_string(opt.transport_retries + 1) + " attempts: " + last);
}

}  // namespace detail

/// Request {prompt, max_tokens, temperature, attachments} → {text, token_logprobs?}.
class HttpBackend final : public GenerationBackend {
 public:
  explicit HttpBackend(std::string_view url, HttpOptions options = {})
      : endpoint_(Endpoint::parse(url)), options_(options) {}

  Completion generate(const GenerationRequest& r) override {
    const nlohmann::json body{{"prompt", r.prompt},
                              {"max_tokens", r.max_tokens},
                              {"temperature", r.temperature},
                              {"attachments", r.attachments}};
    const auto j = detail::post_json(endpoint_, options_, body);
    try {
      Completion c;
      c.text = j.at("text").get<std::string>();
      if (j.contains("token_logprobs") && !j.at("token_logprobs").is_null())
        c.token_logprobs = j.at("token_logprobs").get<std::vector<double>>();
      return c;
    } catch (const nlohmann::json::exception& e) {
      throw BackendError("backend response lacks a text field: " + std::string(e.what()));
    }
  }

  std::size_t max_in_flight() const override { return options_.max_in_flight; }

 private:
  Endpoint endpoint_;
  HttpOptions options_;
};

/// Remote open-ended scorer: {candidate, reference} → {score}.
inline SemanticScorer http_scorer(std::string_view url, HttpOptions options = {}) {
  const Endpoint ep = Endpoint::parse(url);
  SemanticScorer s;
  s.name = "remote";
  s.score = [ep, options](const std::string& c, const std::string& r) {
    const auto j = detail::post_json(ep, options, {{"candidate", c}, {"reference", r}});
    if (!j.contains("score") || !j.at("score").is_number())
      throw BackendError("scorer response lacks a numeric score");
    return j.at("score").get<double>();
  };
  return s;
}

}  // namespace stagevqa
