#include <atomic>
#include <filesystem>
#include <fstream>
#include <thread>

#include "doctest.h"
#include "helpers.hpp"
#include "tdyn/backend.hpp"
#include "tdyn/constructs.hpp"
#include "tdyn/parser.hpp"

using namespace tdyn;
namespace fs = std::filesystem;

namespace {

/// Replays a script of outcomes, then echoes the user message.
class ScriptedProvider : public CompletionProvider {
 public:
  explicit ScriptedProvider(std::vector<std::optional<BackendErrc>> script) : script_(std::move(script)) {}
  std::string complete(const CompletionRequest& r) override {
    const std::size_t i = calls++;
    if (i < script_.size() && script_[i]) {
      if (*script_[i] == BackendErrc::EmptyResponse) return "   ";
      throw BackendError(*script_[i], "scripted");
    }
    return "ok:" + r.user_message + ":" + std::to_string(r.completion_index);
  }
  std::string id() const override { return "scripted"; }
  std::atomic<std::size_t> calls{0};

 private:
  std::vector<std::optional<BackendErrc>> script_;
};

RetryPolicy no_sleep(std::vector<std::chrono::milliseconds>* log = nullptr) {
  RetryPolicy p;
  p.initial_delay = std::chrono::milliseconds(100);
  p.sleep = [log](std::chrono::milliseconds d) {
    if (log) log->push_back(d);
  };
  return p;
}

CompletionRequest req(std::string user = "U") { return {"S", std::move(user), "m", 0.5, 0}; }

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("tdyn_backend_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

}  // namespace

TEST_CASE("request digest is sha256 of sorted compact json") {
  CompletionRequest r{"S", "U\"x", "m", 0.5, 2};
  CHECK(canonical_request(r) ==
        R"({"completion_index":2,"model":"m","system_message":"S","temperature":0.5,"user_message":"U\"x"})");
  CHECK(request_digest(r) == "8461116c72d5aeda53dfc5f327962c97a040cd3bc01e3583117bac8f4f671d75");
  auto r2 = r;
  r2.completion_index = 3;
  CHECK(request_digest(r2) != request_digest(r));
  r2 = r;
  r2.temperature = 0.7;
  CHECK(request_digest(r2) != request_digest(r));
}

TEST_CASE("cache hit and miss") {
  auto provider = std::make_shared<ScriptedProvider>(std::vector<std::optional<BackendErrc>>{});
  Backend b(provider, nullptr, {no_sleep(), 2, {}});
  CHECK(b.complete(req()) == "ok:U:0");
  CHECK(b.complete(req()) == "ok:U:0");
  CHECK(b.provider_calls() == 1);
  CHECK(b.cache_hits() == 1);
  auto texts = b.complete_n(req(), 3);
  CHECK(texts == std::vector<std::string>{"ok:U:0", "ok:U:1", "ok:U:2"});
  CHECK(b.provider_calls() == 3);
  CHECK_THROWS_AS(b.complete_n(req(), 0), std::invalid_argument);
}

TEST_CASE("persistent cache survives reload and skips corrupt lines") {
  const auto dir = temp_dir("cache");
  const std::string path = (dir / "c.jsonl").string();
  {
    auto cache = std::make_shared<ResponseCache>(path);
    auto provider = std::make_shared<ScriptedProvider>(std::vector<std::optional<BackendErrc>>{});
    Backend b(provider, cache, {no_sleep(), 1, {}});
    b.complete(req("a"));
    b.complete(req("b"));
  }
  {
    std::ofstream out(path, std::ios::app);
    out << "{not json\n" << R"({"request_digest":"x"})" << "\n\n";
  }
  auto cache = std::make_shared<ResponseCache>(path);
  CHECK(cache->size() == 2);
  CHECK(cache->corrupt_lines() == 2);
  auto provider = std::make_shared<ScriptedProvider>(std::vector<std::optional<BackendErrc>>{});
  Backend b(provider, cache, {no_sleep(), 1, {}});
  CHECK(b.complete(req("a")) == "ok:a:0");
  CHECK(b.complete(req("b")) == "ok:b:0");
  CHECK(provider->calls == 0);
  b.complete(req("c"));
  CHECK(ResponseCache(path).size() == 3);
}

TEST_CASE("transient errors are retried with backoff") {
  std::vector<std::chrono::milliseconds> sleeps;
  auto provider = std::make_shared<ScriptedProvider>(
      std::vector<std::optional<BackendErrc>>{BackendErrc::Transient, BackendErrc::Timeout, BackendErrc::Network});
  Backend b(provider, nullptr, {no_sleep(&sleeps), 1, {}});
  CHECK(b.complete(req()) == "ok:U:0");
  CHECK(provider->calls == 4);
  CHECK(sleeps == std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(100), std::chrono::milliseconds(200),
                                                          std::chrono::milliseconds(400)});
}

TEST_CASE("retries give up after max attempts") {
  auto provider = std::make_shared<ScriptedProvider>(
      std::vector<std::optional<BackendErrc>>(10, BackendErrc::Transient));
  auto policy = no_sleep();
  policy.max_attempts = 3;
  Backend b(provider, nullptr, {policy, 1, {}});
  try {
    b.complete(req());
    FAIL("no error");
  } catch (const BackendError& e) {
    CHECK(e.code() == BackendErrc::Transient);
    CHECK(std::string(e.what()).find("3 attempts") != std::string::npos);
  }
  CHECK(provider->calls == 3);
}

TEST_CASE("non-retryable errors fail at once") {
  for (auto code : {BackendErrc::EmptyResponse, BackendErrc::Refusal, BackendErrc::Config}) {
    auto provider = std::make_shared<ScriptedProvider>(std::vector<std::optional<BackendErrc>>{code});
    Backend b(provider, nullptr, {no_sleep(), 1, {}});
    try {
      b.complete(req());
      FAIL("no error");
    } catch (const BackendError& e) {
      CHECK(e.code() == code);
      CHECK_FALSE(e.retryable());
    }
    CHECK(provider->calls == 1);
    // failures are not cached
    CHECK(b.complete(req()) == "ok:U:0");
  }
}

TEST_CASE("delay is capped") {
  RetryPolicy p;
  p.initial_delay = std::chrono::milliseconds(500);
  p.max_delay = std::chrono::milliseconds(3000);
  CHECK(p.delay_for(0).count() == 500);
  CHECK(p.delay_for(2).count() == 2000);
  CHECK(p.delay_for(3).count() == 3000);
  CHECK(p.delay_for(10).count() == 3000);
}

TEST_CASE("in-flight calls are bounded") {
  class Slow : public CompletionProvider {
   public:
    std::string complete(const CompletionRequest& r) override {
      const int now = ++active;
      int prev = peak.load();
      while (now > prev && !peak.compare_exchange_weak(prev, now)) {}
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      --active;
      return r.user_message;
    }
    std::string id() const override { return "slow"; }
    std::atomic<int> active{0}, peak{0};
  };
  auto provider = std::make_shared<Slow>();
  Backend b(provider, nullptr, {no_sleep(), 2, {}});
  {
    std::vector<std::jthread> threads;
    for (int t = 0; t < 6; ++t)
      threads.emplace_back([&, t] {
        for (int i = 0; i < 4; ++i) b.complete(req(std::to_string(t * 10 + i)));
      });
  }
  CHECK(provider->peak.load() <= 2);
  CHECK(b.provider_calls() == 24);
}

TEST_CASE("token budget hook sees every provider call") {
  std::size_t seen = 0;
  BackendOptions opts{no_sleep(), 1, [&](std::size_t tokens) { seen += tokens > 0; }};
  auto provider = std::make_shared<ScriptedProvider>(std::vector<std::optional<BackendErrc>>{BackendErrc::Transient});
  Backend b(provider, nullptr, opts);
  b.complete(req());
  b.complete(req());
  CHECK(seen == 2);
}

TEST_CASE("mock provider is deterministic and parseable") {
  Session s = testutil::make_session(testutil::alternating(12));
  s.utterances[0].text = "Hello.";
  s.utterances[1].text = "I never told anyone about my drinking. I feel so sad and worried.";
  s.utterances[2].text = "I'm so sorry, that must be painful. How do you feel about it?";
  s.utterances[3].text = "Thank you, this really helps.";
  s.utterances[4].text = "It sounds like you carry a lot.";
  MockProvider mock;
  CHECK(mock.id() == "mock");

  auto run = [&](ConstructId id, std::size_t idx, std::size_t completion = 0) {
    auto p = render_prompt(id, context_for(id, s, idx));
    return mock.complete({p.system_message, p.user_message, "m", 0.7, completion});
  };
  auto epi = std::get<EpitomeScore>(parse_response(ConstructId::EmpathyEpitome, run(ConstructId::EmpathyEpitome, 2)));
  CHECK(epi.emotional_reactions.value() == 2);
  CHECK(epi.interpretations.value() == 2);
  CHECK(epi.explorations.value() == 2);
  auto refl = std::get<ReflectionScore>(
      parse_response(ConstructId::EmpathyReflection, run(ConstructId::EmpathyReflection, 4)));
  CHECK(refl.label == ReflectionLabel::Reflection);
  auto disc = std::get<DisclosureScore>(parse_response(ConstructId::SelfDisclosure,
                                                       [&] {
                                                         auto p = render_prompt(ConstructId::SelfDisclosure,
                                                                                context_for(ConstructId::SelfDisclosure, s, 1),
                                                                                "summary");
                                                         return mock.complete({p.system_message, p.user_message, "m", 0.7, 0});
                                                       }()));
  CHECK(disc.label == DisclosureLabel::High);
  auto emo = std::get<EmotionScore>(parse_response(ConstructId::Emotion, run(ConstructId::Emotion, 1)));
  CHECK(emo.ratings[5].value() >= 4);  // Sadness
  CHECK(emo.ratings[7].value() >= 4);  // Anxiety
  CHECK(emo.ratings[0].value() == 1);

  CHECK(run(ConstructId::Emotion, 1, 1) == run(ConstructId::Emotion, 1, 1));
  CHECK(mock.complete({"unrelated", "x", "m", 0.7, 0}).find("only evaluate") != std::string::npos);
}
