#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace tdyn {

inline constexpr double k_default_temperature = 0.7;
inline constexpr std::size_t k_default_completions = 3;
inline constexpr std::size_t k_default_max_in_flight = 8;

struct CompletionRequest {
  std::string system_message;
  std::string user_message;
  std::string model;
  double temperature = k_default_temperature;
  std::size_t completion_index = 0;
};

/// Canonical JSON of a request (sorted keys, no whitespace).
std::string canonical_request(const CompletionRequest& request);
/// SHA-256 of canonical_request; the cache key.
std::string request_digest(const CompletionRequest& request);

enum class BackendErrc { Transient, Network, Timeout, Refusal, EmptyResponse, Config };

class BackendError : public std::runtime_error {
 public:
  BackendError(BackendErrc code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}
  BackendErrc code() const { return code_; }
  /// Worth another attempt after backing off.
  bool retryable() const {
    return code_ == BackendErrc::Transient || code_ == BackendErrc::Network ||
           code_ == BackendErrc::Timeout;
  }

 private:
  BackendErrc code_;
};

class CompletionProvider {
 public:
  virtual ~CompletionProvider() = default;
  virtual std::string complete(const CompletionRequest& request) = 0;
  virtual std::string id() const = 0;
};

/// Keyword-rule scorer that answers in the templates' output formats.
/// A pure function of (user_message, completion_index).
std::string mock_complete(const CompletionRequest& request);

class MockProvider final : public CompletionProvider {
 public:
  std::string complete(const CompletionRequest& request) override { return mock_complete(request); }
  std::string id() const override { return "mock"; }
};

struct HttpConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string api_key;
  std::chrono::seconds timeout{60};
};

/// OpenAI-style chat-completion endpoint: POST {base_url}/chat/completions.
class HttpProvider final : public CompletionProvider {
 public:
  explicit HttpProvider(HttpConfig config);
  std::string complete(const CompletionRequest& request) override;
  std::string id() const override { return "http:" + config_.base_url; }

  /// Request body sent for `request` (exposed for wire-format tests).
  static std::string request_body(const CompletionRequest& request);
  /// Extracts the assistant text from a response body; throws BackendError.
  static std::string response_text(const std::string& body);

 private:
  HttpConfig config_;
  std::string scheme_host_;
  std::string path_prefix_;
};

struct CachedResponse {
  std::string request_digest;
  std::string response_text;
  std::string created_at;  // UTC ISO-8601
  std::string backend_id;
  std::string model;
  double temperature = k_default_temperature;
  std::size_t completion_index = 0;
};

/// Content-addressed response cache. Persisted as append-only JSONL; a
/// corrupt line is skipped without affecting the others. Concurrent
/// lookups, serialized appends.
class ResponseCache {
 public:
  /// In-memory only.
  ResponseCache() = default;
  /// Loads `path` if it exists and appends new entries to it.
  explicit ResponseCache(std::string path);

  std::optional<std::string> lookup(const std::string& digest) const;
  void store(const CachedResponse& entry);

  std::size_t size() const;
  std::size_t corrupt_lines() const { return corrupt_lines_; }
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  mutable std::shared_mutex mutex_;
  std::unordered_map<std::string, std::string> entries_;
  std::size_t corrupt_lines_ = 0;
};

struct RetryPolicy {
  std::size_t max_attempts = 5;
  std::chrono::milliseconds initial_delay{500};
  std::chrono::milliseconds max_delay{20000};
  double multiplier = 2.0;
  /// Replaced in tests to avoid real sleeps.
  std::function<void(std::chrono::milliseconds)> sleep;

  std::chrono::milliseconds delay_for(std::size_t attempt) const;
};

/// Called before each provider call with a rough token estimate; may block.
using TokenBudgetHook = std::function<void(std::size_t estimated_tokens)>;

/// Blocks callers once `tokens_per_minute` would be exceeded in the current window.
class PerMinuteTokenBudget {
 public:
  explicit PerMinuteTokenBudget(std::size_t tokens_per_minute) : limit_(tokens_per_minute) {}
  void acquire(std::size_t tokens);

 private:
  std::size_t limit_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point window_start_ = std::chrono::steady_clock::now();
  std::size_t used_ = 0;
};

struct BackendOptions {
  RetryPolicy retry;
  std::size_t max_in_flight = k_default_max_in_flight;
  TokenBudgetHook token_budget;
};

/// Cache + retries + bounded concurrency in front of a provider.
class Backend {
 public:
  Backend(std::shared_ptr<CompletionProvider> provider, std::shared_ptr<ResponseCache> cache,
          BackendOptions options = {});
  ~Backend();
  Backend(const Backend&) = delete;
  Backend& operator=(const Backend&) = delete;

  std::string complete(const CompletionRequest& request);
  /// Requests completion indices 0..n-1 of `base`, in order.
  std::vector<std::string> complete_n(const CompletionRequest& base, std::size_t n);

  std::size_t provider_calls() const { return provider_calls_.load(); }
  std::size_t cache_hits() const { return cache_hits_.load(); }
  std::string provider_id() const { return provider_->id(); }

 private:
  class Slots;
  std::string call_with_retries(const CompletionRequest& request);

  std::shared_ptr<CompletionProvider> provider_;
  std::shared_ptr<ResponseCache> cache_;
  BackendOptions options_;
  std::unique_ptr<Slots> slots_;
  std::atomic<std::size_t> provider_calls_{0};
  std::atomic<std::size_t> cache_hits_{0};
};

}  // namespace tdyn
