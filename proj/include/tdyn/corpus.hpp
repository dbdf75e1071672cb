#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tdyn/types.hpp"

namespace tdyn {

struct Utterance {
  std::string session_id;
  std::size_t index = 0;
  Speaker speaker = Speaker::Client;
  std::string text;

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

struct Session {
  std::string session_id;
  std::string client_id;
  int session_order = 1;  // 1-based chronological rank within client
  std::vector<Utterance> utterances;

  /// Scoring needs at least one turn from each speaker.
  bool scorable() const;

  friend bool operator==(const Session&, const Session&) = default;
};

/// Immutable after parse; sessions ordered by (client_id, session_order).
struct Corpus {
  std::vector<Session> sessions;

  const Session* find(std::string_view session_id) const;
  std::size_t utterance_count() const;
  std::size_t client_count() const;

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

struct Segment {
  std::string session_id;
  std::size_t segment_index = 0;  // 0..9
  std::size_t begin = 0;          // [begin, end) over utterance indices
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

inline constexpr std::size_t k_segments_per_session = 10;

/// The prompt inputs for one target. `targets` holds the scored utterance
/// (utterance-level constructs) or the segment's utterances (Rapport);
/// `context` holds earlier utterances only, oldest first.
struct ContextWindow {
  ConstructId construct = ConstructId::Emotion;
  TargetId target;
  std::vector<Utterance> targets;
  std::vector<Utterance> context;
};

enum class CorpusErrc {
  MalformedRecord,
  UnknownSpeaker,
  DuplicateSessionOrder,
  SessionOrderGap,
  InconsistentSession,
  NonContiguousIndex,
  SessionTooShort,
  TargetOutOfRange,
  WrongTargetKind,
};

class CorpusError : public std::runtime_error {
 public:
  CorpusError(CorpusErrc code, std::string message, std::size_t line = 0)
      : std::runtime_error(std::move(message)), code_(code), line_(line) {}
  CorpusErrc code() const { return code_; }
  /// 1-based input line, 0 when not tied to a line.
  std::size_t line() const { return line_; }

 private:
  CorpusErrc code_;
  std::size_t line_;
};

/// Parses the JSONL transcript format:
/// {"client_id", "session_id", "session_order", "index", "speaker": "C"|"T", "text"}
Corpus parse_corpus(std::istream& in);
Corpus parse_corpus(std::string_view jsonl);

/// Inverse of parse_corpus; one LF-terminated record per utterance.
std::string serialize_corpus(const Corpus& corpus);

/// Ten contiguous segments; earlier segments take the remainder.
std::vector<Segment> segment_session(const Session& session);

/// Context window for an utterance-level construct.
ContextWindow context_for(ConstructId construct, const Session& session, std::size_t target_index);
/// Context window for a segment-level construct (Rapport).
ContextWindow context_for(ConstructId construct, const Session& session, const Segment& segment);

struct SynthOptions {
  /// Disclosure depends on the preceding therapist turn (empathy/exploration).
  bool plant_disclosure_effect = false;
  /// Self-directed negative emotion depends on preceding therapist empathy.
  bool plant_emotion_effect = false;
  /// Every session gets the same neutral rapport cues (flat trend).
  bool constant_rapport = false;
};

/// Deterministic synthetic corpus. Speakers alternate starting with the
/// therapist; text is drawn from a fixed phrase bank.
Corpus synth_corpus(std::uint64_t seed, std::size_t n_clients, std::size_t sessions_per_client,
                    std::size_t utterances_per_session, const SynthOptions& options = {});

}  // namespace tdyn
