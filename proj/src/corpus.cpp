#include "tdyn/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tdyn/util.hpp"

namespace tdyn {

char speaker_tag(Speaker s) { return s == Speaker::Client ? 'C' : 'T'; }

std::optional<Speaker> speaker_from_tag(std::string_view tag) {
  if (tag == "C") return Speaker::Client;
  if (tag == "T") return Speaker::Therapist;
  return std::nullopt;
}

std::string_view construct_name(ConstructId id) {
  switch (id) {
    case ConstructId::EmpathyEpitome: return "epitome";
    case ConstructId::EmpathyReflection: return "reflection";
    case ConstructId::SelfDisclosure: return "self_disclosure";
    case ConstructId::Emotion: return "emotion";
    case ConstructId::Rapport: return "rapport";
  }
  return "unknown";
}

std::optional<ConstructId> construct_from_name(std::string_view name) {
  for (ConstructId id : k_all_constructs)
    if (construct_name(id) == name) return id;
  return std::nullopt;
}

std::string TargetId::str() const {
  return session_id + (kind == TargetKind::Utterance ? ":u" : ":s") + std::to_string(index);
}

TargetId TargetId::parse(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos || colon == 0 || colon + 2 > text.size())
    throw std::invalid_argument("malformed target id '" + std::string(text) + "'");
  TargetId id;
  id.session_id = std::string(text.substr(0, colon));
  const char kind = text[colon + 1];
  if (kind == 'u') {
    id.kind = TargetKind::Utterance;
  } else if (kind == 's') {
    id.kind = TargetKind::Segment;
  } else {
    throw std::invalid_argument("malformed target id '" + std::string(text) + "'");
  }
  std::string_view digits = text.substr(colon + 2);
  if (digits.empty() || digits.find_first_not_of("0123456789") != std::string_view::npos)
    throw std::invalid_argument("malformed target id '" + std::string(text) + "'");
  id.index = std::stoul(std::string(digits));
  return id;
}

bool Session::scorable() const {
  bool client = false, therapist = false;
  for (const auto& u : utterances) (u.speaker == Speaker::Client ? client : therapist) = true;
  return client && therapist;
}

const Session* Corpus::find(std::string_view session_id) const {
  for (const auto& s : sessions)
    if (s.session_id == session_id) return &s;
  return nullptr;
}

std::size_t Corpus::utterance_count() const {
  std::size_t n = 0;
  for (const auto& s : sessions) n += s.utterances.size();
  return n;
}

std::size_t Corpus::client_count() const {
  std::set<std::string_view> ids;
  for (const auto& s : sessions) ids.insert(s.client_id);
  return ids.size();
}

namespace {

using nlohmann::json;

[[noreturn]] void malformed(std::size_t line, const std::string& what) {
  throw CorpusError(CorpusErrc::MalformedRecord,
                    "line " + std::to_string(line) + ": " + what, line);
}

std::string require_string(const json& rec, const char* field, std::size_t line) {
  auto it = rec.find(field);
  if (it == rec.end()) malformed(line, std::string("missing field '") + field + "'");
  if (!it->is_string()) malformed(line, std::string("field '") + field + "' must be a string");
  return it->get<std::string>();
}

std::int64_t require_int(const json& rec, const char* field, std::size_t line) {
  auto it = rec.find(field);
  if (it == rec.end()) malformed(line, std::string("missing field '") + field + "'");
  if (!it->is_number_integer())
    malformed(line, std::string("field '") + field + "' must be an integer");
  return it->get<std::int64_t>();
}

struct PendingSession {
  Session session;
  std::size_t first_line = 0;
  std::vector<std::size_t> lines;  // parallel to session.utterances
};

}  // namespace

Corpus parse_corpus(std::istream& in) {
  std::map<std::string, PendingSession> by_id;
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (trim(raw).empty()) continue;
    json rec;
    try {
      rec = json::parse(raw);
    } catch (const json::parse_error& e) {
      malformed(line_no, std::string("invalid JSON (") + e.what() + ")");
    }
    if (!rec.is_object()) malformed(line_no, "record must be a JSON object");

    const std::string client_id = require_string(rec, "client_id", line_no);
    const std::string session_id = require_string(rec, "session_id", line_no);
    const std::int64_t order = require_int(rec, "session_order", line_no);
    const std::int64_t index = require_int(rec, "index", line_no);
    const std::string tag = require_string(rec, "speaker", line_no);
    std::string text = require_string(rec, "text", line_no);

    if (client_id.empty()) malformed(line_no, "field 'client_id' is empty");
    if (session_id.empty()) malformed(line_no, "field 'session_id' is empty");
    if (order < 1) malformed(line_no, "field 'session_order' must be >= 1");
    if (index < 0) malformed(line_no, "field 'index' must be >= 0");
    if (trim(text).empty()) malformed(line_no, "field 'text' is empty");
    auto speaker = speaker_from_tag(tag);
    if (!speaker)
      throw CorpusError(CorpusErrc::UnknownSpeaker,
                        "line " + std::to_string(line_no) + ": field 'speaker' has unknown tag '" +
                            tag + "' (expected \"C\" or \"T\")",
                        line_no);

    auto [it, inserted] = by_id.try_emplace(session_id);
    PendingSession& p = it->second;
    if (inserted) {
      p.session.session_id = session_id;
      p.session.client_id = client_id;
      p.session.session_order = static_cast<int>(order);
      p.first_line = line_no;
    } else if (p.session.client_id != client_id || p.session.session_order != order) {
      throw CorpusError(CorpusErrc::InconsistentSession,
                        "line " + std::to_string(line_no) + ": session '" + session_id +
                            "' disagrees with line " + std::to_string(p.first_line) +
                            " on client_id/session_order",
                        line_no);
    }
    p.session.utterances.push_back(
        Utterance{session_id, static_cast<std::size_t>(index), *speaker, std::move(text)});
    p.lines.push_back(line_no);
  }

  Corpus corpus;
  std::map<std::pair<std::string, int>, std::size_t> seen_order;  // -> first line
  for (auto& [id, p] : by_id) {
    auto key = std::make_pair(p.session.client_id, p.session.session_order);
    auto [pos, fresh] = seen_order.try_emplace(key, p.first_line);
    if (!fresh)
      throw CorpusError(CorpusErrc::DuplicateSessionOrder,
                        "line " + std::to_string(std::max(p.first_line, pos->second)) +
                            ": client '" + key.first + "' has two sessions with session_order " +
                            std::to_string(key.second),
                        std::max(p.first_line, pos->second));

    std::vector<std::size_t> perm(p.session.utterances.size());
    for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
      return p.session.utterances[a].index < p.session.utterances[b].index;
    });
    std::vector<Utterance> sorted;
    sorted.reserve(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) {
      Utterance& u = p.session.utterances[perm[i]];
      if (u.index != i)
        throw CorpusError(CorpusErrc::NonContiguousIndex,
                          "line " + std::to_string(p.lines[perm[i]]) + ": session '" + id +
                              "' expected utterance index " + std::to_string(i) + ", found " +
                              std::to_string(u.index),
                          p.lines[perm[i]]);
      sorted.push_back(std::move(u));
    }
    p.session.utterances = std::move(sorted);
    corpus.sessions.push_back(std::move(p.session));
  }

  std::sort(corpus.sessions.begin(), corpus.sessions.end(), [](const Session& a, const Session& b) {
    return std::tie(a.client_id, a.session_order) < std::tie(b.client_id, b.session_order);
  });

  for (std::size_t i = 0; i < corpus.sessions.size(); ++i) {
    const Session& s = corpus.sessions[i];
    int expected = (i == 0 || corpus.sessions[i - 1].client_id != s.client_id)
                       ? 1
                       : corpus.sessions[i - 1].session_order + 1;
    if (s.session_order != expected)
      throw CorpusError(CorpusErrc::SessionOrderGap,
                        "client '" + s.client_id + "' session_order jumps to " +
                            std::to_string(s.session_order) + " (expected " +
                            std::to_string(expected) + ")");
  }
  return corpus;
}

Corpus parse_corpus(std::string_view jsonl) {
  std::istringstream in{std::string(jsonl)};
  return parse_corpus(in);
}

std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& s : corpus.sessions) {
    for (const auto& u : s.utterances) {
      nlohmann::ordered_json rec;
      rec["client_id"] = s.client_id;
      rec["session_id"] = s.session_id;
      rec["session_order"] = s.session_order;
      rec["index"] = u.index;
      rec["speaker"] = std::string(1, speaker_tag(u.speaker));
      rec["text"] = u.text;
      out += rec.dump();
      out.push_back('\n');
    }
  }
  return out;
}

std::vector<Segment> segment_session(const Session& session) {
  const std::size_t n = session.utterances.size();
  if (n < k_segments_per_session)
    throw CorpusError(CorpusErrc::SessionTooShort,
                      "session '" + session.session_id + "' has " + std::to_string(n) +
                          " utterances; segmentation needs at least 10");
  const std::size_t base = n / k_segments_per_session;
  const std::size_t extra = n % k_segments_per_session;
  std::vector<Segment> out;
  out.reserve(k_segments_per_session);
  std::size_t begin = 0;
  for (std::size_t i = 0; i < k_segments_per_session; ++i) {
    std::size_t len = base + (i < extra ? 1 : 0);
    out.push_back(Segment{session.session_id, i, begin, begin + len});
    begin += len;
  }
  return out;
}

ContextWindow context_for(ConstructId construct, const Session& session, std::size_t target_index) {
  if (construct == ConstructId::Rapport)
    throw CorpusError(CorpusErrc::WrongTargetKind, "rapport is scored per segment, not per utterance");
  if (target_index >= session.utterances.size())
    throw CorpusError(CorpusErrc::TargetOutOfRange,
                      "utterance " + std::to_string(target_index) + " not in session '" +
                          session.session_id + "'");

  ContextWindow w;
  w.construct = construct;
  w.target = TargetId{session.session_id, TargetKind::Utterance, target_index};
  w.targets.push_back(session.utterances[target_index]);

  const auto& utts = session.utterances;
  switch (construct) {
    case ConstructId::EmpathyEpitome:
    case ConstructId::EmpathyReflection: {
      // Two most recent client turns before the target, oldest first.
      for (std::size_t i = target_index; i-- > 0 && w.context.size() < 2;)
        if (utts[i].speaker == Speaker::Client) w.context.insert(w.context.begin(), utts[i]);
      break;
    }
    case ConstructId::SelfDisclosure:
    case ConstructId::Emotion: {
      const std::size_t span = construct == ConstructId::SelfDisclosure ? 2 : 5;
      const std::size_t from = target_index > span ? target_index - span : 0;
      w.context.assign(utts.begin() + static_cast<std::ptrdiff_t>(from),
                       utts.begin() + static_cast<std::ptrdiff_t>(target_index));
      break;
    }
    case ConstructId::Rapport: break;
  }
  return w;
}

ContextWindow context_for(ConstructId construct, const Session& session, const Segment& segment) {
  if (construct != ConstructId::Rapport)
    throw CorpusError(CorpusErrc::WrongTargetKind,
                      std::string(construct_name(construct)) + " is scored per utterance, not per segment");
  if (segment.session_id != session.session_id || segment.end > session.utterances.size() ||
      segment.begin >= segment.end)
    throw CorpusError(CorpusErrc::TargetOutOfRange,
                      "segment " + std::to_string(segment.segment_index) + " not in session '" +
                          session.session_id + "'");
  ContextWindow w;
  w.construct = construct;
  w.target = TargetId{session.session_id, TargetKind::Segment, segment.segment_index};
  w.targets.assign(session.utterances.begin() + static_cast<std::ptrdiff_t>(segment.begin),
                   session.utterances.begin() + static_cast<std::ptrdiff_t>(segment.end));
  return w;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

namespace {

// The phrase bank is paired with the keyword rules of the mock backend:
// each sentence family triggers a known score pattern there.
enum class TherapistMove { Empathy, Exploration, Neutral };

constexpr std::string_view k_empathy_phrases[] = {
    "That must be so painful. I'm really sorry you went through that.",
    "I understand how you feel, and that sounds tough.",
    "It sounds like you have been carrying this alone, and that must be exhausting.",
    "So you felt pushed aside, and I feel really sad for you.",
};
constexpr std::string_view k_exploration_phrases[] = {
    "What happened after that?",
    "Are you feeling alone in this?",
    "How did that make you feel?",
    "Can you tell me more about it?",
};
constexpr std::string_view k_neutral_phrases[] = {
    "Okay.",
    "Mm-hmm, go on.",
    "Let's check the time; we have a few minutes left.",
    "Right, we talked about the schedule last week.",
};
constexpr std::string_view k_general_phrases[] = {
    "The weather has been nice lately.",
    "Traffic was terrible on the way over.",
    "The news said it might snow this weekend.",
    "That café downtown finally reopened.",
};
constexpr std::string_view k_medium_phrases[] = {
    "I started a new job last week.",
    "My sister is visiting next month.",
    "I've been going to the gym on Tuesdays.",
    "My daughter said \"hi\" to the neighbors.",
};
constexpr std::string_view k_high_phrases[] = {
    "I've never told anyone about my drinking.",
    "My marriage is falling apart and it's my secret.",
    "I keep thinking about the affair I had.",
    "I wrote \"never again\" in my journal after the relapse\\breakdown.",
};

enum class EmotionFamily { SelfDirected, Outward, Surprise, Enjoyment, None };

constexpr std::string_view k_self_directed_phrases[] = {
    "Everything feels sad and hopeless, scary and anxious.",
    "Mornings feel sad and hopeless.",
    "Evenings get scary and anxious.",
};
constexpr std::string_view k_outward_phrases[] = {
    "People like that are pathetic and disgusting, it makes everyone angry.",
    "That boss is pathetic.",
    "The whole thing was disgusting and infuriating.",
};
constexpr std::string_view k_surprise_phrases[] = {
    "Wow, that was a total surprise, nobody expected it.",
};
constexpr std::string_view k_enjoyment_phrases[] = {
    "The trip was great fun, a happy time.",
    "Saturday was a happy day at the lake.",
};
constexpr std::string_view k_rapport_positive_client[] = {
    "Thank you, that really helps.",
    "Talking with you feels good.",
};
constexpr std::string_view k_rapport_negative_client[] = {
    "This feels like a waste of time.",
    "Nobody in here gets it.",
};
constexpr std::string_view k_rapport_positive_therapist =
    "I really appreciate how open you are with me.";

template <std::size_t N>
std::string_view pick(std::mt19937_64& rng, const std::string_view (&bank)[N]) {
  return bank[uniform_below(rng, N)];
}

template <std::size_t N>
std::size_t pick_weighted(std::mt19937_64& rng, const std::array<double, N>& weights) {
  double total = 0;
  for (double w : weights) total += w;
  double x = uniform01(rng) * total;
  for (std::size_t i = 0; i < N; ++i) {
    if (x < weights[i]) return i;
    x -= weights[i];
  }
  return N - 1;
}

std::string two_digit(std::size_t v) {
  return (v < 10 ? "0" : "") + std::to_string(v);
}

}  // namespace

Corpus synth_corpus(std::uint64_t seed, std::size_t n_clients, std::size_t sessions_per_client,
                    std::size_t utterances_per_session, const SynthOptions& options) {
  if (n_clients == 0 || sessions_per_client == 0)
    throw std::invalid_argument("synth_corpus: client and session counts must be >= 1");
  if (utterances_per_session < k_segments_per_session)
    throw std::invalid_argument("synth_corpus: utterances_per_session must be >= 10");

  std::mt19937_64 rng(seed);
  Corpus corpus;
  for (std::size_t c = 1; c <= n_clients; ++c) {
    const std::string client_id = "client_" + two_digit(c);
    // Clients differ in how quickly rapport builds.
    const double warmth = 0.6 + 0.8 * uniform01(rng);
    for (std::size_t k = 1; k <= sessions_per_client; ++k) {
      Session s;
      s.client_id = client_id;
      s.session_order = static_cast<int>(k);
      s.session_id = client_id + "-s" + two_digit(k);

      const double t = static_cast<double>(k - 1);
      const double p_pos = options.constant_rapport
                               ? 0.0
                               : std::min(0.9, (0.10 + 0.35 * (1.0 - std::exp(-t / 2.0))) * warmth);
      const double p_neg = options.constant_rapport ? 0.0 : 0.25 * std::exp(-t / 1.5);

      TherapistMove last_move = TherapistMove::Neutral;
      for (std::size_t i = 0; i < utterances_per_session; ++i) {
        Utterance u;
        u.session_id = s.session_id;
        u.index = i;
        u.speaker = (i % 2 == 0) ? Speaker::Therapist : Speaker::Client;
        std::string text;
        if (u.speaker == Speaker::Therapist) {
          last_move = static_cast<TherapistMove>(pick_weighted<3>(rng, {0.3, 0.3, 0.4}));
          switch (last_move) {
            case TherapistMove::Empathy: text = pick(rng, k_empathy_phrases); break;
            case TherapistMove::Exploration: text = pick(rng, k_exploration_phrases); break;
            case TherapistMove::Neutral: text = pick(rng, k_neutral_phrases); break;
          }
          if (uniform01(rng) < p_pos * 0.5) {
            text += ' ';
            text += k_rapport_positive_therapist;
          }
        } else {
          const bool engaged = last_move != TherapistMove::Neutral;
          std::array<double, 3> disclosure{0.35, 0.35, 0.30};
          if (options.plant_disclosure_effect)
            disclosure = engaged ? std::array<double, 3>{0.15, 0.35, 0.50}
                                 : std::array<double, 3>{0.45, 0.35, 0.20};
          switch (pick_weighted<3>(rng, disclosure)) {
            case 0: text = pick(rng, k_general_phrases); break;
            case 1: text = pick(rng, k_medium_phrases); break;
            default: text = pick(rng, k_high_phrases); break;
          }
          std::array<double, 5> emotion{0.25, 0.20, 0.10, 0.15, 0.30};
          if (options.plant_emotion_effect && last_move == TherapistMove::Empathy)
            emotion = {0.50, 0.15, 0.08, 0.07, 0.20};
          std::string_view extra;
          switch (static_cast<EmotionFamily>(pick_weighted<5>(rng, emotion))) {
            case EmotionFamily::SelfDirected: extra = pick(rng, k_self_directed_phrases); break;
            case EmotionFamily::Outward: extra = pick(rng, k_outward_phrases); break;
            case EmotionFamily::Surprise: extra = pick(rng, k_surprise_phrases); break;
            case EmotionFamily::Enjoyment: extra = pick(rng, k_enjoyment_phrases); break;
            case EmotionFamily::None: break;
          }
          if (!extra.empty()) {
            text += ' ';
            text += extra;
          }
          const double r = uniform01(rng);
          if (r < p_pos) {
            text += ' ';
            text += pick(rng, k_rapport_positive_client);
          } else if (r < p_pos + p_neg) {
            text += ' ';
            text += pick(rng, k_rapport_negative_client);
          }
        }
        u.text = std::move(text);
        s.utterances.push_back(std::move(u));
      }
      corpus.sessions.push_back(std::move(s));
    }
  }
  return corpus;
}

}  // namespace tdyn
