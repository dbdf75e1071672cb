#include "tdyn/backend.hpp"

#include <algorithm>
#include <cmath>
#include <condition_variable>
#include <ctime>
#include <fstream>
#include <thread>

#include "json.hpp"
#include "tdyn/constructs.hpp"
#include "tdyn/parser.hpp"
#include "tdyn/util.hpp"

namespace tdyn {

using nlohmann::json;

std::string canonical_request(const CompletionRequest& r) {
  json j;  // std::map-backed: keys serialize sorted
  j["completion_index"] = r.completion_index;
  j["model"] = r.model;
  j["system_message"] = r.system_message;
  j["temperature"] = r.temperature;
  j["user_message"] = r.user_message;
  return j.dump();
}

std::string request_digest(const CompletionRequest& r) { return sha256_hex(canonical_request(r)); }

// ---------------------------------------------------------------------------
// Mock

namespace {

std::string between(std::string_view text, std::string_view open, std::string_view close) {
  auto b = text.rfind(open);
  if (b == std::string_view::npos) return {};
  b += open.size();
  auto e = text.find(close, b);
  if (e == std::string_view::npos) return {};
  return std::string(text.substr(b, e - b));
}

bool has(const std::string& lower, std::string_view needle) {
  return lower.find(needle) != std::string::npos;
}

std::vector<std::string> words(const std::string& lower) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : lower) {
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '\'') {
      cur.push_back(c);
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::optional<ConstructId> identify(std::string_view system_message) {
  for (ConstructId id : k_all_constructs)
    if (prompt_template(id).system_message == system_message) return id;
  return std::nullopt;
}

std::string mock_epitome(const std::string& target) {
  const std::string t = to_lower(target);
  int er = 0, ip = 0, ex = 0;
  std::vector<std::string> cues;
  if (has(t, "sorry") || has(t, "sad for you")) {
    er = 2;
    cues.push_back("explicit emotional reaction");
  } else if (has(t, "sounds tough") || has(t, "will be fine")) {
    er = 1;
    cues.push_back("implied warmth");
  }
  if (has(t, "must be")) {
    ip = 2;
    cues.push_back("specific inferred feeling");
  } else if (has(t, "i understand")) {
    ip = 1;
    cues.push_back("generic understanding");
  }
  if (has(t, "?")) {
    ex = (has(t, "feel") || has(t, "alone")) ? 2 : 1;
    cues.push_back(ex == 2 ? "labelled exploratory question" : "generic question");
  }
  std::string why = cues.empty() ? "No empathic cues in the response." : "Cues: ";
  for (std::size_t i = 0; i < cues.size(); ++i) why += (i ? ", " : "") + cues[i];
  return format_response(EpitomeScore{er, ip, ex, why});
}

std::string mock_reflection(const std::string& target) {
  const std::string t = to_lower(std::string(trim(target)));
  const bool reflective = t.rfind("it sounds like", 0) == 0 || t.rfind("so you", 0) == 0 ||
                          t.rfind("you're saying", 0) == 0 || t.rfind("what i'm hearing", 0) == 0;
  return format_response(ReflectionScore{
      reflective ? ReflectionLabel::Reflection : ReflectionLabel::NonReflection,
      reflective ? "The response restates the client's experience." : "The response does not restate the client."});
}

std::string mock_disclosure(const std::string& target) {
  const std::string t = to_lower(target);
  static constexpr std::string_view k_high[] = {"never told anyone", "drinking", "secret", "affair",
                                                "relapse", "divorce", "marriage"};
  static constexpr std::string_view k_self[] = {"i", "i'm", "i've", "i'd", "i'll", "my", "me", "myself", "mine"};
  DisclosureLabel label = DisclosureLabel::General;
  if (std::any_of(std::begin(k_high), std::end(k_high), [&](auto k) { return has(t, k); })) {
    label = DisclosureLabel::High;
  } else {
    for (const auto& w : words(t))
      if (std::find(std::begin(k_self), std::end(k_self), w) != std::end(k_self)) label = DisclosureLabel::Medium;
  }
  static constexpr std::string_view k_reason[] = {"", "External topic only.", "Shares personal, non-sensitive details.",
                                                  "Reveals sensitive personal material."};
  return format_response(DisclosureScore{label, std::string(k_reason[static_cast<int>(label)])});
}

std::string mock_emotion(const std::string& target, std::uint64_t h) {
  const std::string t = to_lower(target);
  static const std::array<std::vector<std::string_view>, 9> k_cues = {{
      {"angry", "infuriating", "furious"},
      {"pathetic", "beneath"},
      {"disgusting", "gross"},
      {"happy", "great fun", "enjoy"},
      {"scary", "scared", "afraid"},
      {"sad"},
      {"surprise", "wow"},
      {"anxious", "worried", "nervous"},
      {"hopeless", "worthless", "empty"},
  }};
  EmotionScore s;
  std::vector<std::string> seen;
  for (std::size_t i = 0; i < 9; ++i) {
    const bool present = std::any_of(k_cues[i].begin(), k_cues[i].end(), [&](auto k) { return has(t, k); });
    s.ratings[i] = EmotionRating(present ? 4 + static_cast<int>((h >> i) & 1U) : 1);
    if (present) seen.emplace_back(k_emotion_names[i]);
  }
  s.rationale = seen.empty() ? "No clear emotion is present." : "Lexical cues for";
  for (std::size_t i = 0; i < seen.size(); ++i) s.rationale += (i ? ", " : " ") + seen[i];
  return format_response(s);
}

std::string mock_rapport(const std::string& log, std::uint64_t h) {
  const std::string t = to_lower(log);
  int pos = 0, neg = 0;
  for (auto cue : {"thank you", "really helps", "appreciate", "feels good"})
    for (auto p = t.find(cue); p != std::string::npos; p = t.find(cue, p + 1)) ++pos;
  for (auto cue : {"waste of time", "gets it"})
    for (auto p = t.find(cue); p != std::string::npos; p = t.find(cue, p + 1)) ++neg;
  const int overall = std::clamp(4 + pos - neg, 1, 7);
  auto jitter = [&](int shift) {
    return BondRating(std::clamp(overall + static_cast<int>((h >> shift) % 3) - 1, 1, 7));
  };
  return format_response(RapportScore{jitter(0), jitter(8), jitter(16), jitter(24), BondRating(overall),
                                      "Affirmations: " + std::to_string(pos) +
                                          ", ruptures: " + std::to_string(neg) + "."});
}

}  // namespace

std::string mock_complete(const CompletionRequest& request) {
  const std::uint64_t h = fnv1a64(std::to_string(request.completion_index), fnv1a64(request.user_message));
  const std::string& u = request.user_message;
  auto id = identify(request.system_message);
  if (!id) return "I can only evaluate the configured therapy constructs.";
  switch (*id) {
    case ConstructId::EmpathyEpitome:
      return mock_epitome(between(u, "Therapist's Response: \"", "\"\n\nEvaluation Output Format:"));
    case ConstructId::EmpathyReflection:
      return mock_reflection(between(u, "herapist's Response: \"", "\"\n\nOutput Format:"));
    case ConstructId::SelfDisclosure:
      return mock_disclosure(between(u, "\nClient: \"", "\"\n\nOutput Format:"));
    case ConstructId::Emotion:
      return mock_emotion(between(u, "Analyze the following central utterance:\n", "\n\nTake a deep breath"), h);
    case ConstructId::Rapport:
      return mock_rapport(between(u, "Conversation log:\n", "\n\nProvide a overall rating"), h);
  }
  return {};
}

// ---------------------------------------------------------------------------
// Cache

namespace {

std::string utc_now_iso8601() {
  std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

ResponseCache::ResponseCache(std::string path) : path_(std::move(path)) {
  std::ifstream in(path_);
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    try {
      json j = json::parse(line);
      entries_[j.at("request_digest").get<std::string>()] = j.at("response_text").get<std::string>();
    } catch (const std::exception&) {
      ++corrupt_lines_;
    }
  }
}

std::optional<std::string> ResponseCache::lookup(const std::string& digest) const {
  std::shared_lock lock(mutex_);
  auto it = entries_.find(digest);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ResponseCache::store(const CachedResponse& e) {
  std::unique_lock lock(mutex_);
  if (!entries_.emplace(e.request_digest, e.response_text).second) return;
  if (path_.empty()) return;
  json j;
  j["request_digest"] = e.request_digest;
  j["response_text"] = e.response_text;
  j["created_at"] = e.created_at.empty() ? utc_now_iso8601() : e.created_at;
  j["backend_id"] = e.backend_id;
  j["model"] = e.model;
  j["temperature"] = e.temperature;
  j["completion_index"] = e.completion_index;
  std::ofstream out(path_, std::ios::app);
  out << j.dump() << '\n';
  out.flush();
  if (!out) throw std::runtime_error("cannot append to response cache '" + path_ + "'");
}

std::size_t ResponseCache::size() const {
  std::shared_lock lock(mutex_);
  return entries_.size();
}

// ---------------------------------------------------------------------------
// Retry, budget, backend

std::chrono::milliseconds RetryPolicy::delay_for(std::size_t attempt) const {
  double d = static_cast<double>(initial_delay.count()) * std::pow(multiplier, static_cast<double>(attempt));
  d = std::min(d, static_cast<double>(max_delay.count()));
  return std::chrono::milliseconds(static_cast<long long>(d));
}

void PerMinuteTokenBudget::acquire(std::size_t tokens) {
  std::unique_lock lock(mutex_);
  for (;;) {
    auto now = std::chrono::steady_clock::now();
    if (now - window_start_ >= std::chrono::minutes(1)) {
      window_start_ = now;
      used_ = 0;
    }
    if (used_ + tokens <= limit_ || used_ == 0) {
      used_ += tokens;
      return;
    }
    auto wake = window_start_ + std::chrono::minutes(1);
    lock.unlock();
    std::this_thread::sleep_until(wake);
    lock.lock();
  }
}

class Backend::Slots {
 public:
  explicit Slots(std::size_t n) : free_(std::max<std::size_t>(n, 1)) {}
  void acquire() {
    std::unique_lock lock(m_);
    cv_.wait(lock, [&] { return free_ > 0; });
    --free_;
  }
  void release() {
    {
      std::lock_guard lock(m_);
      ++free_;
    }
    cv_.notify_one();
  }

 private:
  std::mutex m_;
  std::condition_variable cv_;
  std::size_t free_;
};

Backend::Backend(std::shared_ptr<CompletionProvider> provider, std::shared_ptr<ResponseCache> cache,
                 BackendOptions options)
    : provider_(std::move(provider)),
      cache_(cache ? std::move(cache) : std::make_shared<ResponseCache>()),
      options_(std::move(options)),
      slots_(std::make_unique<Slots>(options_.max_in_flight)) {
  if (!provider_) throw std::invalid_argument("Backend: no provider");
  if (!options_.retry.sleep) options_.retry.sleep = [](auto d) { std::this_thread::sleep_for(d); };
}

Backend::~Backend() = default;

std::string Backend::call_with_retries(const CompletionRequest& request) {
  const std::size_t attempts = std::max<std::size_t>(options_.retry.max_attempts, 1);
  for (std::size_t attempt = 0;; ++attempt) {
    if (options_.token_budget)
      options_.token_budget((request.system_message.size() + request.user_message.size()) / 4 + 1);
    slots_->acquire();
    try {
      ++provider_calls_;
      std::string text = provider_->complete(request);
      slots_->release();
      if (trim(text).empty())
        throw BackendError(BackendErrc::EmptyResponse, "provider returned an empty response");
      return text;
    } catch (const BackendError& e) {
      // EmptyResponse is thrown after release above.
      if (e.code() != BackendErrc::EmptyResponse) slots_->release();
      if (!e.retryable() || attempt + 1 >= attempts) {
        if (e.retryable())
          throw BackendError(e.code(), std::string(e.what()) + " (gave up after " +
                                           std::to_string(attempt + 1) + " attempts)");
        throw;
      }
    } catch (...) {
      slots_->release();
      throw;
    }
    options_.retry.sleep(options_.retry.delay_for(attempt));
  }
}

std::string Backend::complete(const CompletionRequest& request) {
  const std::string digest = request_digest(request);
  if (auto hit = cache_->lookup(digest)) {
    ++cache_hits_;
    return *hit;
  }
  std::string text = call_with_retries(request);
  cache_->store(CachedResponse{digest, text, {}, provider_->id(), request.model, request.temperature,
                               request.completion_index});
  return text;
}

std::vector<std::string> Backend::complete_n(const CompletionRequest& base, std::size_t n) {
  if (n == 0) throw std::invalid_argument("complete_n: n must be >= 1");
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    CompletionRequest r = base;
    r.completion_index = i;
    out.push_back(complete(r));
  }
  return out;
}

}  // namespace tdyn
