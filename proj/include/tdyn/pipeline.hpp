#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdyn/backend.hpp"
#include "tdyn/constructs.hpp"
#include "tdyn/corpus.hpp"
#include "tdyn/parser.hpp"

namespace tdyn {

struct RunMetadata {
  std::string backend_id;
  std::string model;
  double temperature = k_default_temperature;
  std::size_t completions = k_default_completions;
  std::vector<ConstructId> constructs;
  std::map<std::string, std::string> template_checksums;

  friend bool operator==(const RunMetadata&, const RunMetadata&) = default;
};

enum class RecordStatus { Ok, Failed };

struct ScoreRecord {
  ConstructScore score;  // raw/aggregate empty when Failed
  RecordStatus status = RecordStatus::Ok;
  std::size_t dropped_completions = 0;
  std::string reason;  // failure or first dropped-completion error

  bool ok() const { return status == RecordStatus::Ok; }
  friend bool operator==(const ScoreRecord&, const ScoreRecord&) = default;
};

/// Append-only set of scored items, at most one per (target, construct).
class ScoreStore {
 public:
  ScoreStore() = default;
  explicit ScoreStore(RunMetadata meta) : meta_(std::move(meta)) {}

  const RunMetadata& meta() const { return meta_; }
  const std::vector<ScoreRecord>& records() const { return records_; }

  void append(ScoreRecord record);
  const ScoreRecord* find(ConstructId construct, const TargetId& target) const;
  /// Aggregate of an Ok record, or nullptr.
  const std::vector<double>* aggregate(ConstructId construct, const TargetId& target) const;

  std::size_t count(ConstructId construct, RecordStatus status) const;
  std::vector<const ScoreRecord*> failures() const;

  friend bool operator==(const ScoreStore& a, const ScoreStore& b) {
    return a.meta_ == b.meta_ && a.records_ == b.records_;
  }

 private:
  RunMetadata meta_;
  std::vector<ScoreRecord> records_;
  std::map<std::pair<ConstructId, TargetId>, std::size_t> index_;
};

/// Writes `<dir>/scores.jsonl` and `<dir>/scores.meta.json`.
void save_store(const ScoreStore& store, const std::filesystem::path& dir);
/// Accepts the directory or the scores.jsonl path.
ScoreStore load_store(const std::filesystem::path& path);

std::string store_record_json(const ScoreRecord& record);

struct ScoringConfig {
  std::vector<ConstructId> constructs{k_all_constructs.begin(), k_all_constructs.end()};
  std::size_t completions = k_default_completions;
  std::string model = "gpt-4o-mini";
  double temperature = k_default_temperature;
  /// Worker threads issuing backend calls; 1 = sequential.
  std::size_t workers = k_default_max_in_flight;
  /// Self-Disclosure session background, per session id; missing = "".
  std::map<std::string, std::string> summaries;
  RenderOptions render;
};

/// Scores every client utterance (Self-Disclosure, Emotion), every
/// therapist utterance (EPITOME, Reflection), and every segment (Rapport)
/// of each scorable session. A failing item is recorded, never fatal.
ScoreStore score_corpus(const Corpus& corpus, Backend& backend, const ScoringConfig& config);

enum class SessionRapportRule { Mean, Last, Max };

std::optional<SessionRapportRule> session_rapport_rule_from_name(std::string_view name);
std::string_view session_rapport_rule_name(SessionRapportRule rule);

class PipelineError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Session-level rapport from its parsed segment overall ratings.
/// Throws PipelineError when the session has no parsed Rapport segment.
double session_rapport(const ScoreStore& store, const Session& session,
                       SessionRapportRule rule = SessionRapportRule::Mean);

/// One client turn aligned with the most recent preceding therapist turn.
struct AnalysisRow {
  std::string client_id;
  std::string session_id;
  int session_order = 1;
  std::size_t utterance_index = 0;
  std::size_t therapist_index = 0;
  double disclosure = 0;
  std::array<double, 9> emotions{};
  double emotional_reactions = 0;
  double interpretations = 0;
  double explorations = 0;
  double reflection = 0;
  std::optional<double> rapport_prev;
  double log_session = 0;

  friend bool operator==(const AnalysisRow&, const AnalysisRow&) = default;
};

struct CoverageReport {
  std::size_t client_utterances = 0;
  std::size_t with_preceding_therapist = 0;
  std::size_t missing_scores = 0;
  std::size_t rows = 0;
  std::size_t rows_missing_rapport_prev = 0;
};

struct AnalysisRowSet {
  std::vector<AnalysisRow> rows;
  CoverageReport coverage;
};

AnalysisRowSet build_analysis_rows(const ScoreStore& store, const Corpus& corpus,
                                   SessionRapportRule rule = SessionRapportRule::Mean);

/// Column order: client_id, session_id, session_order, utterance_index,
/// therapist_index, disclosure, nine emotions, er, ip, ex, reflection,
/// rapport_prev (NA if missing), log_session.
std::string analysis_rows_csv(const std::vector<AnalysisRow>& rows);

}  // namespace tdyn
