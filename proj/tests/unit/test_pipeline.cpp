#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "helpers.hpp"
#include "tdyn/pipeline.hpp"

using namespace tdyn;
namespace fs = std::filesystem;

namespace {

RetryPolicy no_sleep() {
  RetryPolicy p;
  p.sleep = [](auto) {};
  return p;
}

/// Mock answers, except garbage for emotion prompts whose central utterance is `marker`
/// (all completions, or only `only_index`).
class CorruptingProvider : public CompletionProvider {
 public:
  CorruptingProvider(std::string marker, std::optional<std::size_t> only_index = std::nullopt)
      : marker_("central utterance:\n" + std::move(marker) + "\n"), only_(only_index) {}
  std::string complete(const CompletionRequest& r) override {
    if (r.system_message == prompt_template(ConstructId::Emotion).system_message &&
        r.user_message.find(marker_) != std::string::npos && (!only_ || *only_ == r.completion_index))
      return "I would rather not rate this.";
    return mock_complete(r);
  }
  std::string id() const override { return "corrupting"; }

 private:
  std::string marker_;
  std::optional<std::size_t> only_;
};

class RefusingProvider : public CompletionProvider {
 public:
  std::string complete(const CompletionRequest&) override { throw BackendError(BackendErrc::Refusal, "refused"); }
  std::string id() const override { return "refusing"; }
};

ScoringConfig config(std::size_t workers) {
  ScoringConfig c;
  c.workers = workers;
  return c;
}

ScoreStore score_with(const Corpus& corpus, std::shared_ptr<CompletionProvider> p, std::size_t workers = 1,
                      std::shared_ptr<ResponseCache> cache = nullptr, std::size_t* calls = nullptr) {
  Backend b(std::move(p), std::move(cache), {no_sleep(), 4, {}});
  auto store = score_corpus(corpus, b, config(workers));
  if (calls) *calls = b.provider_calls();
  return store;
}

fs::path temp_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("tdyn_pipeline_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

ScoreRecord rapport_record(const std::string& session, std::size_t seg, double overall) {
  ScoreRecord r;
  r.score.target = {session, TargetKind::Segment, seg};
  r.score.construct = ConstructId::Rapport;
  r.score.aggregate = {overall, overall, overall, overall, overall};
  return r;
}

}  // namespace

TEST_CASE("one 20-utterance session yields ten records per construct") {
  const Corpus corpus{{testutil::make_session(testutil::alternating(20))}};
  std::size_t calls = 0;
  const auto store = score_with(corpus, std::make_shared<MockProvider>(), 1, nullptr, &calls);
  for (ConstructId id : k_all_constructs) {
    CAPTURE(construct_name(id));
    CHECK(store.count(id, RecordStatus::Ok) == 10);
    CHECK(store.count(id, RecordStatus::Failed) == 0);
  }
  CHECK(store.records().size() == 50);
  CHECK(calls <= 150);
  CHECK(store.meta().completions == 3);
  CHECK(store.meta().backend_id == "mock");
  CHECK(store.meta().template_checksums == template_checksums());
  for (const auto& r : store.records()) CHECK(r.score.raw.size() == 3);
}

TEST_CASE("short sessions get no rapport segments and unscorable sessions are skipped") {
  const Corpus corpus{{testutil::make_session("TCTCTCTC", "a", "c1", 1), testutil::make_session("TTTT", "b", "c2", 1)}};
  const auto store = score_with(corpus, std::make_shared<MockProvider>());
  CHECK(store.count(ConstructId::Rapport, RecordStatus::Ok) == 0);
  CHECK(store.count(ConstructId::Emotion, RecordStatus::Ok) == 4);
  CHECK(store.count(ConstructId::EmpathyEpitome, RecordStatus::Ok) == 4);
}

TEST_CASE("warm rerun makes no provider calls") {
  const Corpus corpus = synth_corpus(3, 2, 2, 16);
  auto cache = std::make_shared<ResponseCache>();
  std::size_t cold = 0, warm = 0;
  const auto a = score_with(corpus, std::make_shared<MockProvider>(), 1, cache, &cold);
  const auto b = score_with(corpus, std::make_shared<MockProvider>(), 1, cache, &warm);
  CHECK(cold > 0);
  CHECK(warm == 0);
  CHECK(a.records() == b.records());
}

TEST_CASE("sequential and parallel scoring agree") {
  const Corpus corpus = synth_corpus(5, 3, 2, 24, {true, true, false});
  const auto seq = score_with(corpus, std::make_shared<MockProvider>(), 1);
  const auto par = score_with(corpus, std::make_shared<MockProvider>(), 8);
  CHECK(seq == par);
}

TEST_CASE("a fully corrupted item fails alone") {
  const Corpus corpus{{testutil::make_session(testutil::alternating(20))}};
  const auto store = score_with(corpus, std::make_shared<CorruptingProvider>("C5"), 4);
  REQUIRE(store.failures().size() == 1);
  const auto* f = store.failures()[0];
  CHECK(f->score.construct == ConstructId::Emotion);
  CHECK(f->score.target == TargetId{"s1", TargetKind::Utterance, 5});
  CHECK(f->dropped_completions == 3);
  CHECK(f->reason.rfind("no parseable completion", 0) == 0);
  CHECK(f->score.aggregate.empty());
  CHECK(store.aggregate(ConstructId::Emotion, f->score.target) == nullptr);
  CHECK(store.records().size() == 50);
}

TEST_CASE("one bad completion is dropped, not fatal") {
  const Corpus corpus{{testutil::make_session(testutil::alternating(20))}};
  const auto store = score_with(corpus, std::make_shared<CorruptingProvider>("C7", 1));
  CHECK(store.failures().empty());
  const auto* r = store.find(ConstructId::Emotion, {"s1", TargetKind::Utterance, 7});
  REQUIRE(r);
  CHECK(r->ok());
  CHECK(r->dropped_completions == 1);
  CHECK(r->score.raw.size() == 2);
  CHECK(r->reason.find("MissingField") != std::string::npos);
}

TEST_CASE("backend failures are recorded per item") {
  const Corpus corpus{{testutil::make_session("TCTC")}};
  const auto store = score_with(corpus, std::make_shared<RefusingProvider>());
  CHECK(store.failures().size() == store.records().size());
  for (const auto* f : store.failures()) CHECK(f->reason.rfind("backend: ", 0) == 0);
}

TEST_CASE("store rejects duplicates and round-trips through disk") {
  ScoreStore s;
  s.append(rapport_record("x", 0, 3));
  CHECK_THROWS_AS(s.append(rapport_record("x", 0, 4)), std::logic_error);

  const Corpus corpus{{testutil::make_session(testutil::alternating(20))}};
  const auto store = score_with(corpus, std::make_shared<CorruptingProvider>("C5"));
  const auto dir = temp_dir("roundtrip");
  save_store(store, dir);
  CHECK(fs::exists(dir / "scores.jsonl"));
  CHECK(fs::exists(dir / "scores.meta.json"));
  CHECK(load_store(dir) == store);
  CHECK(load_store(dir / "scores.jsonl") == store);
  CHECK_THROWS(load_store(dir / "missing"));
}

TEST_CASE("session rapport rules") {
  ScoreStore s;
  s.append(rapport_record("a", 0, 3));
  s.append(rapport_record("a", 1, 6));
  s.append(rapport_record("a", 2, 4));
  const Session a = testutil::make_session(testutil::alternating(30), "a");
  CHECK(session_rapport(s, a, SessionRapportRule::Mean) == doctest::Approx(13.0 / 3));
  CHECK(session_rapport(s, a, SessionRapportRule::Last) == 4);
  CHECK(session_rapport(s, a, SessionRapportRule::Max) == 6);
  CHECK_THROWS_AS(session_rapport(s, testutil::make_session("TC", "b"), SessionRapportRule::Mean), PipelineError);
  CHECK(session_rapport_rule_from_name("last") == SessionRapportRule::Last);
  CHECK_FALSE(session_rapport_rule_from_name("median"));
  CHECK(session_rapport_rule_name(SessionRapportRule::Max) == "max");
}

TEST_CASE("analysis rows pair each client turn with the latest earlier therapist turn") {
  const std::string pattern = "CCTTCTCCCTCTTTCCTCTC";
  Corpus corpus{{testutil::make_session(pattern, "s1", "c1", 1), testutil::make_session(pattern, "s2", "c1", 2),
                 testutil::make_session("CTCTCTCTCTCT", "s3", "c2", 1)}};
  const auto store = score_with(corpus, std::make_shared<CorruptingProvider>("C8"));
  const auto set = build_analysis_rows(store, corpus);

  // brute force
  std::vector<std::tuple<std::string, std::size_t, std::size_t>> expected;
  std::size_t clients = 0, paired = 0;
  for (const auto& s : corpus.sessions) {
    for (std::size_t i = 0; i < s.utterances.size(); ++i) {
      if (s.utterances[i].speaker != Speaker::Client) continue;
      ++clients;
      for (std::size_t j = i; j-- > 0;) {
        if (s.utterances[j].speaker == Speaker::Therapist) {
          ++paired;
          if (i != 8) expected.emplace_back(s.session_id, i, j);
          break;
        }
      }
    }
  }
  std::vector<std::tuple<std::string, std::size_t, std::size_t>> got;
  for (const auto& r : set.rows) got.emplace_back(r.session_id, r.utterance_index, r.therapist_index);
  CHECK(got == expected);
  CHECK(set.coverage.client_utterances == clients);
  CHECK(set.coverage.with_preceding_therapist == paired);
  CHECK(set.coverage.missing_scores == 3);
  CHECK(set.coverage.rows + set.coverage.missing_scores == set.coverage.with_preceding_therapist);

  const double prev = session_rapport(store, corpus.sessions[0]);
  for (const auto& r : set.rows) {
    if (r.session_id == "s2") {
      REQUIRE(r.rapport_prev);
      CHECK(*r.rapport_prev == prev);
      CHECK(r.log_session == doctest::Approx(std::log(2.0)));
    } else {
      CHECK_FALSE(r.rapport_prev);
      CHECK(r.log_session == 0);
    }
    const auto* d = store.aggregate(ConstructId::SelfDisclosure, {r.session_id, TargetKind::Utterance, r.utterance_index});
    const auto* e = store.aggregate(ConstructId::EmpathyEpitome, {r.session_id, TargetKind::Utterance, r.therapist_index});
    CHECK(r.disclosure == d->at(0));
    CHECK(r.explorations == e->at(2));
  }
  CHECK(set.coverage.rows_missing_rapport_prev ==
        static_cast<std::size_t>(std::count_if(set.rows.begin(), set.rows.end(), [](auto& r) { return !r.rapport_prev; })));

  const auto csv = analysis_rows_csv(set.rows);
  CHECK(csv.rfind("client_id,session_id,session_order,utterance_index,therapist_index,disclosure,anger,contempt,"
                  "disgust,enjoyment,fear,sadness,surprise,anxiety,depression,emotional_reactions,interpretations,"
                  "explorations,reflection,rapport_prev,log_session\n",
                  0) == 0);
  CHECK(csv.find(",NA,") != std::string::npos);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(set.rows.size() + 1));
}
