#pragma once

#include <algorithm>
#include <condition_variable>
#include <cstddef>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stagevqa/error.hpp"
#include "stagevqa/text.hpp"

namespace stagevqa {

struct GenerationRequest {
  std::string prompt;
  int max_tokens = 512;
  double temperature = 0.0;
  std::vector<std::string> attachments;  // image references, never inlined
};

struct Completion {
  std::string text;
  std::optional<std::vector<double>> token_logprobs;
};

/// Text generation service: prompt in, completion out. Implementations must
/// either answer every request or throw BackendError, and must tolerate
/// concurrent calls.
class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual Completion generate(const GenerationRequest& request) = 0;
  virtual std::size_t max_in_flight() const { return 1; }
};

/// Caps concurrent calls into a shared backend.
class ThrottledBackend final : public GenerationBackend {
 public:
  ThrottledBackend(GenerationBackend& inner, std::size_t max_in_flight)
      : inner_(inner), limit_(max_in_flight == 0 ? 1 : max_in_flight) {}

  Completion generate(const GenerationRequest& request) override {
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return active_ < limit_; });
      ++active_;
    }
    struct Release {
      ThrottledBackend* self;
      ~Release() {
        {
          std::lock_guard lock(self->mu_);
          --self->active_;
        }
        self->cv_.notify_one();
      }
    } release{this};
    return inner_.generate(request);
  }

  std::size_t max_in_flight() const override { return limit_; }

 private:
  GenerationBackend& inner_;
  std::size_t limit_;
  std::size_t active_ = 0;
  std::mutex mu_;
  std::condition_variable cv_;
};

/// Replays canned completions. Rules are tried in order; the first whose
/// needle occurs in the prompt answers. Each rule may carry a queue of
/// replies consumed one per call, the last one repeating.
class ScriptedBackend final : public GenerationBackend {
 public:
  ScriptedBackend& on(std::string needle, std::vector<std::string> replies) {
    std::lock_guard lock(mu_);
    rules_.push_back(Rule{std::move(needle), std::move(replies), 0});
    return *this;
  }

  ScriptedBackend& on(std::string needle, std::string reply) {
    return on(std::move(needle), std::vector<std::string>{std::move(reply)});
  }

  /// Reply used when no rule matches; without one such calls throw.
  ScriptedBackend& otherwise(std::string reply) {
    std::lock_guard lock(mu_);
    fallback_ = std::move(reply);
    return *this;
  }

  Completion generate(const GenerationRequest& request) override {
    std::lock_guard lock(mu_);
    prompts_.push_back(request.prompt);
    for (auto& r : rules_) {
      if (request.prompt.find(r.needle) == std::string::npos) continue;
      const std::size_t k = std::min(r.next, r.replies.size() - 1);
      if (r.next < r.replies.size()) ++r.next;
      return Completion{r.replies[k], std::nullopt};
    }
    if (fallback_) return Completion{*fallback_, std::nullopt};
    throw BackendError("scripted backend has no reply for prompt");
  }

  std::vector<std::string> prompts() const {
    std::lock_guard lock(mu_);
    return prompts_;
  }

  std::size_t calls() const {
    std::lock_guard lock(mu_);
    return prompts_.size();
  }

 private:
  struct Rule {
    std::string needle;
    std::vector<std::string> replies;
    std::size_t next;
  };
  mutable std::mutex mu_;
  std::vector<Rule> rules_;
  std::optional<std::string> fallback_;
  std::vector<std::string> prompts_;
};

/// Answers with the live question: the text after the last "Q: " line.
class EchoBackend final : public GenerationBackend {
 public:
  Completion generate(const GenerationRequest& request) override {
    const std::string& p = request.prompt;
    std::size_t q = p.rfind("Q: ");
    std::string question = q == std::string::npos ? p : p.substr(q + 3);
    const std::size_t a = question.rfind("\nA:");
    if (a != std::string::npos) question.resize(a);
    return Completion{"Echo: " + question, std::nullopt};
  }
  std::size_t max_in_flight() const override { return 64; }
};

/// Adapts a callable.
class FunctionBackend final : public GenerationBackend {
 public:
  explicit FunctionBackend(std::function<Completion(const GenerationRequest&)> f,
                           std::size_t in_flight = 1)
      : f_(std::move(f)), in_flight_(in_flight) {}
  Completion generate(const GenerationRequest& r) override { return f_(r); }
  std::size_t max_in_flight() const override { return in_flight_; }

 private:
  std::function<Completion(const GenerationRequest&)> f_;
  std::size_t in_flight_;
};

/// Calls the backend and parses its text; unparseable output earns one retry,
/// then the ParseError propagates.
template <class Parse>
auto generate_parsed(GenerationBackend& backend, const GenerationRequest& request, Parse parse)
    -> decltype(parse(std::string{})) {
  for (int attempt = 0;; ++attempt) {
    const Completion c = backend.generate(request);
    try {
      return parse(c.text);
    } catch (const ParseError&) {
      if (attempt >= 1) throw;
    }
  }
}

}  // namespace stagevqa
