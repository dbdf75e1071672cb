#include "tdyn/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "tdyn/util.hpp"

namespace tdyn {

using nlohmann::json;

void ScoreStore::append(ScoreRecord record) {
  auto key = std::make_pair(record.score.construct, record.score.target);
  if (index_.count(key))
    throw std::logic_error("score store already has " + std::string(construct_name(key.first)) +
                           " for " + key.second.str());
  index_.emplace(std::move(key), records_.size());
  records_.push_back(std::move(record));
}

const ScoreRecord* ScoreStore::find(ConstructId construct, const TargetId& target) const {
  auto it = index_.find({construct, target});
  return it == index_.end() ? nullptr : &records_[it->second];
}

const std::vector<double>* ScoreStore::aggregate(ConstructId construct, const TargetId& target) const {
  const ScoreRecord* r = find(construct, target);
  return (r && r->ok()) ? &r->score.aggregate : nullptr;
}

std::size_t ScoreStore::count(ConstructId construct, RecordStatus status) const {
  return static_cast<std::size_t>(std::count_if(records_.begin(), records_.end(), [&](const ScoreRecord& r) {
    return r.score.construct == construct && r.status == status;
  }));
}

std::vector<const ScoreRecord*> ScoreStore::failures() const {
  std::vector<const ScoreRecord*> out;
  for (const auto& r : records_)
    if (!r.ok()) out.push_back(&r);
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

nlohmann::ordered_json raw_to_json(const RawScore& raw) {
  return std::visit(
      [](const auto& s) -> nlohmann::ordered_json {
        using T = std::decay_t<decltype(s)>;
        nlohmann::ordered_json j;
        if constexpr (std::is_same_v<T, EpitomeScore>) {
          j["er"] = s.emotional_reactions.value();
          j["ip"] = s.interpretations.value();
          j["ex"] = s.explorations.value();
          j["explanation"] = s.explanation;
        } else if constexpr (std::is_same_v<T, ReflectionScore>) {
          j["label"] = label_name(s.label);
          j["reasoning"] = s.reasoning;
        } else if constexpr (std::is_same_v<T, DisclosureScore>) {
          j["label"] = label_name(s.label);
          j["reasoning"] = s.reasoning;
        } else if constexpr (std::is_same_v<T, EmotionScore>) {
          j["ratings"] = nlohmann::ordered_json::array();
          for (auto r : s.ratings) j["ratings"].push_back(r.value());
          j["rationale"] = s.rationale;
        } else {
          j["liking"] = s.liking.value();
          j["confidence"] = s.confidence.value();
          j["appreciation"] = s.appreciation.value();
          j["trust"] = s.trust.value();
          j["overall"] = s.overall.value();
          j["rationale"] = s.rationale;
        }
        return j;
      },
      raw);
}

RawScore raw_from_json(ConstructId id, const json& j) {
  switch (id) {
    case ConstructId::EmpathyEpitome:
      return EpitomeScore{{j.at("er").get<int>(), "ER"}, {j.at("ip").get<int>(), "IP"},
                          {j.at("ex").get<int>(), "EX"}, j.at("explanation").get<std::string>()};
    case ConstructId::EmpathyReflection: {
      const auto label = j.at("label").get<std::string>();
      if (label != "Reflection" && label != "Non-Reflection")
        throw std::runtime_error("bad reflection label '" + label + "'");
      return ReflectionScore{label == "Reflection" ? ReflectionLabel::Reflection : ReflectionLabel::NonReflection,
                             j.at("reasoning").get<std::string>()};
    }
    case ConstructId::SelfDisclosure: {
      const auto label = j.at("label").get<std::string>();
      DisclosureLabel l;
      if (label == "G") l = DisclosureLabel::General;
      else if (label == "M") l = DisclosureLabel::Medium;
      else if (label == "H") l = DisclosureLabel::High;
      else throw std::runtime_error("bad disclosure label '" + label + "'");
      return DisclosureScore{l, j.at("reasoning").get<std::string>()};
    }
    case ConstructId::Emotion: {
      EmotionScore s;
      const auto& arr = j.at("ratings");
      if (!arr.is_array() || arr.size() != 9) throw std::runtime_error("emotion ratings must have 9 entries");
      for (std::size_t i = 0; i < 9; ++i)
        s.ratings[i] = EmotionRating(arr[i].get<int>(), k_emotion_names[i]);
      s.rationale = j.at("rationale").get<std::string>();
      return s;
    }
    case ConstructId::Rapport:
      return RapportScore{{j.at("liking").get<int>(), "Liking"},
                          {j.at("confidence").get<int>(), "Confidence"},
                          {j.at("appreciation").get<int>(), "Appreciation"},
                          {j.at("trust").get<int>(), "Trust"},
                          {j.at("overall").get<int>(), "Overall"},
                          j.at("rationale").get<std::string>()};
  }
  throw std::logic_error("unknown construct");
}

ConstructId construct_or_throw(const std::string& name) {
  auto id = construct_from_name(name);
  if (!id) throw std::runtime_error("unknown construct '" + name + "'");
  return *id;
}

}  // namespace

std::string store_record_json(const ScoreRecord& r) {
  nlohmann::ordered_json j;
  j["target"] = r.score.target.str();
  j["construct"] = construct_name(r.score.construct);
  j["status"] = r.ok() ? "ok" : "failed";
  j["aggregate"] = r.score.aggregate;
  j["raw"] = nlohmann::ordered_json::array();
  for (const auto& raw : r.score.raw) j["raw"].push_back(raw_to_json(raw));
  j["dropped_completions"] = r.dropped_completions;
  j["reason"] = r.reason;
  return j.dump();
}

void save_store(const ScoreStore& store, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream out(dir / "scores.jsonl", std::ios::binary | std::ios::trunc);
    for (const auto& r : store.records()) out << store_record_json(r) << '\n';
    if (!out) throw std::runtime_error("cannot write " + (dir / "scores.jsonl").string());
  }
  nlohmann::ordered_json meta;
  const RunMetadata& m = store.meta();
  meta["backend_id"] = m.backend_id;
  meta["model"] = m.model;
  meta["temperature"] = m.temperature;
  meta["completions"] = m.completions;
  meta["constructs"] = json::array();
  for (auto c : m.constructs) meta["constructs"].push_back(construct_name(c));
  meta["template_checksums"] = m.template_checksums;
  meta["records"] = store.records().size();
  meta["failed"] = store.failures().size();
  std::ofstream out(dir / "scores.meta.json", std::ios::binary | std::ios::trunc);
  out << meta.dump(2) << '\n';
  if (!out) throw std::runtime_error("cannot write " + (dir / "scores.meta.json").string());
}

ScoreStore load_store(const std::filesystem::path& path) {
  std::filesystem::path dir = std::filesystem::is_directory(path) ? path : path.parent_path();
  std::filesystem::path jsonl = std::filesystem::is_directory(path) ? dir / "scores.jsonl" : path;
  std::ifstream meta_in(dir / "scores.meta.json");
  if (!meta_in) throw std::runtime_error("missing " + (dir / "scores.meta.json").string());
  json meta = json::parse(meta_in);
  RunMetadata m;
  m.backend_id = meta.at("backend_id").get<std::string>();
  m.model = meta.at("model").get<std::string>();
  m.temperature = meta.at("temperature").get<double>();
  m.completions = meta.at("completions").get<std::size_t>();
  for (const auto& c : meta.at("constructs")) m.constructs.push_back(construct_or_throw(c.get<std::string>()));
  m.template_checksums = meta.at("template_checksums").get<std::map<std::string, std::string>>();

  ScoreStore store(std::move(m));
  std::ifstream in(jsonl);
  if (!in) throw std::runtime_error("missing " + jsonl.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      json j = json::parse(line);
      ScoreRecord r;
      r.score.target = TargetId::parse(j.at("target").get<std::string>());
      r.score.construct = construct_or_throw(j.at("construct").get<std::string>());
      r.status = j.at("status").get<std::string>() == "ok" ? RecordStatus::Ok : RecordStatus::Failed;
      r.score.aggregate = j.at("aggregate").get<std::vector<double>>();
      for (const auto& raw : j.at("raw")) r.score.raw.push_back(raw_from_json(r.score.construct, raw));
      r.dropped_completions = j.at("dropped_completions").get<std::size_t>();
      r.reason = j.at("reason").get<std::string>();
      store.append(std::move(r));
    } catch (const std::exception& e) {
      throw std::runtime_error(jsonl.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return store;
}

// ---------------------------------------------------------------------------
// Scoring

namespace {

struct WorkItem {
  ConstructId construct;
  const Session* session;
  std::size_t utterance = 0;
  std::optional<Segment> segment;
};

bool wants(const ScoringConfig& config, ConstructId id) {
  return std::find(config.constructs.begin(), config.constructs.end(), id) != config.constructs.end();
}

ScoreRecord score_item(const WorkItem& item, Backend& backend, const ScoringConfig& config) {
  ScoreRecord rec;
  rec.score.construct = item.construct;
  ContextWindow window = item.segment ? context_for(item.construct, *item.session, *item.segment)
                                      : context_for(item.construct, *item.session, item.utterance);
  rec.score.target = window.target;

  std::optional<std::string_view> summary;
  if (item.construct == ConstructId::SelfDisclosure) {
    auto it = config.summaries.find(item.session->session_id);
    summary = it == config.summaries.end() ? std::string_view{} : std::string_view(it->second);
  }
  try {
    RenderedPrompt prompt = render_prompt(item.construct, window, summary, config.render);
    CompletionRequest base{std::move(prompt.system_message), std::move(prompt.user_message), config.model,
                           config.temperature, 0};
    std::vector<std::string> texts = backend.complete_n(base, config.completions);
    for (const auto& text : texts) {
      try {
        rec.score.raw.push_back(parse_response(item.construct, text));
      } catch (const std::exception& e) {
        if (rec.dropped_completions++ == 0) rec.reason = e.what();
      }
    }
    if (rec.score.raw.empty()) {
      rec.status = RecordStatus::Failed;
      rec.reason = "no parseable completion: " + rec.reason;
    } else {
      rec.score.aggregate = aggregate(rec.score.raw);
    }
  } catch (const BackendError& e) {
    rec.status = RecordStatus::Failed;
    rec.score.raw.clear();
    rec.reason = std::string("backend: ") + e.what();
  } catch (const PromptError& e) {
    rec.status = RecordStatus::Failed;
    rec.reason = std::string("prompt: ") + e.what();
  }
  return rec;
}

}  // namespace

ScoreStore score_corpus(const Corpus& corpus, Backend& backend, const ScoringConfig& config) {
  if (config.completions == 0) throw std::invalid_argument("score_corpus: completions must be >= 1");
  RunMetadata meta{backend.provider_id(), config.model, config.temperature, config.completions,
                   config.constructs, template_checksums()};

  std::vector<WorkItem> items;
  for (const auto& s : corpus.sessions) {
    if (!s.scorable()) continue;
    for (const auto& u : s.utterances) {
      if (u.speaker == Speaker::Therapist) {
        for (auto id : {ConstructId::EmpathyEpitome, ConstructId::EmpathyReflection})
          if (wants(config, id)) items.push_back({id, &s, u.index, std::nullopt});
      } else {
        for (auto id : {ConstructId::SelfDisclosure, ConstructId::Emotion})
          if (wants(config, id)) items.push_back({id, &s, u.index, std::nullopt});
      }
    }
    if (wants(config, ConstructId::Rapport) && s.utterances.size() >= k_segments_per_session)
      for (const auto& seg : segment_session(s)) items.push_back({ConstructId::Rapport, &s, 0, seg});
  }

  std::vector<ScoreRecord> results(items.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < items.size(); i = next++) results[i] = score_item(items[i], backend, config);
  };
  const std::size_t n_threads = std::clamp<std::size_t>(config.workers, 1, std::max<std::size_t>(items.size(), 1));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
  }

  ScoreStore store(std::move(meta));
  for (auto& r : results) store.append(std::move(r));
  return store;
}

// ---------------------------------------------------------------------------
// Derived session-level variables

std::optional<SessionRapportRule> session_rapport_rule_from_name(std::string_view name) {
  if (name == "mean") return SessionRapportRule::Mean;
  if (name == "last") return SessionRapportRule::Last;
  if (name == "max") return SessionRapportRule::Max;
  return std::nullopt;
}

std::string_view session_rapport_rule_name(SessionRapportRule rule) {
  switch (rule) {
    case SessionRapportRule::Mean: return "mean";
    case SessionRapportRule::Last: return "last";
    case SessionRapportRule::Max: return "max";
  }
  return "mean";
}

double session_rapport(const ScoreStore& store, const Session& session, SessionRapportRule rule) {
  std::vector<double> overall;
  for (std::size_t seg = 0; seg < k_segments_per_session; ++seg) {
    const auto* agg = store.aggregate(ConstructId::Rapport, TargetId{session.session_id, TargetKind::Segment, seg});
    if (agg) overall.push_back(agg->at(4));
  }
  if (overall.empty()) throw PipelineError("no parsed rapport segment for session '" + session.session_id + "'");
  switch (rule) {
    case SessionRapportRule::Last: return overall.back();
    case SessionRapportRule::Max: return *std::max_element(overall.begin(), overall.end());
    case SessionRapportRule::Mean: break;
  }
  double sum = 0;
  for (double v : overall) sum += v;
  return sum / static_cast<double>(overall.size());
}

AnalysisRowSet build_analysis_rows(const ScoreStore& store, const Corpus& corpus, SessionRapportRule rule) {
  AnalysisRowSet out;
  std::map<std::pair<std::string, int>, const Session*> by_order;
  for (const auto& s : corpus.sessions) by_order[{s.client_id, s.session_order}] = &s;

  for (const auto& s : corpus.sessions) {
    std::optional<double> prev;
    if (auto it = by_order.find({s.client_id, s.session_order - 1}); it != by_order.end()) {
      try {
        prev = session_rapport(store, *it->second, rule);
      } catch (const PipelineError&) {
      }
    }
    std::optional<std::size_t> last_therapist;
    for (const auto& u : s.utterances) {
      if (u.speaker == Speaker::Therapist) {
        last_therapist = u.index;
        continue;
      }
      ++out.coverage.client_utterances;
      if (!last_therapist) continue;
      ++out.coverage.with_preceding_therapist;

      const TargetId client{s.session_id, TargetKind::Utterance, u.index};
      const TargetId therapist{s.session_id, TargetKind::Utterance, *last_therapist};
      const auto* disc = store.aggregate(ConstructId::SelfDisclosure, client);
      const auto* emo = store.aggregate(ConstructId::Emotion, client);
      const auto* epi = store.aggregate(ConstructId::EmpathyEpitome, therapist);
      const auto* refl = store.aggregate(ConstructId::EmpathyReflection, therapist);
      if (!disc || !emo || !epi || !refl) {
        ++out.coverage.missing_scores;
        continue;
      }
      AnalysisRow row;
      row.client_id = s.client_id;
      row.session_id = s.session_id;
      row.session_order = s.session_order;
      row.utterance_index = u.index;
      row.therapist_index = *last_therapist;
      row.disclosure = disc->at(0);
      std::copy_n(emo->begin(), 9, row.emotions.begin());
      row.emotional_reactions = epi->at(0);
      row.interpretations = epi->at(1);
      row.explorations = epi->at(2);
      row.reflection = refl->at(0);
      row.rapport_prev = prev;
      row.log_session = std::log(static_cast<double>(s.session_order));
      if (!prev) ++out.coverage.rows_missing_rapport_prev;
      out.rows.push_back(std::move(row));
    }
  }
  out.coverage.rows = out.rows.size();
  return out;
}

std::string analysis_rows_csv(const std::vector<AnalysisRow>& rows) {
  std::ostringstream out;
  out << "client_id,session_id,session_order,utterance_index,therapist_index,disclosure";
  for (auto name : k_emotion_names) out << ',' << to_lower(name);
  out << ",emotional_reactions,interpretations,explorations,reflection,rapport_prev,log_session\n";
  for (const auto& r : rows) {
    out << csv_escape(r.client_id) << ',' << csv_escape(r.session_id) << ',' << r.session_order << ','
        << r.utterance_index << ',' << r.therapist_index << ',' << format_fixed(r.disclosure);
    for (double e : r.emotions) out << ',' << format_fixed(e);
    out << ',' << format_fixed(r.emotional_reactions) << ',' << format_fixed(r.interpretations) << ','
        << format_fixed(r.explorations) << ',' << format_fixed(r.reflection) << ','
        << (r.rapport_prev ? format_fixed(*r.rapport_prev) : std::string("NA")) << ','
        << format_fixed(r.log_session) << '\n';
  }
  return out.str();
}

}  // namespace tdyn
