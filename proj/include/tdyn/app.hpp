#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdyn/backend.hpp"
#include "tdyn/corpus.hpp"
#include "tdyn/pipeline.hpp"

namespace tdyn {

enum ExitCode : int { k_exit_ok = 0, k_exit_input = 2, k_exit_backend = 3, k_exit_internal = 4 };

/// Bad user input: missing files, invalid config, unreadable data.
class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* k_api_key_env = "TDYN_API_KEY";

struct RunConfig {
  std::string corpus;
  std::string backend = "mock";  // mock | http
  std::string base_url = "https://api.openai.com/v1";
  std::string model = "gpt-4o-mini";
  double temperature = k_default_temperature;
  std::size_t completions = k_default_completions;
  std::vector<ConstructId> constructs{k_all_constructs.begin(), k_all_constructs.end()};
  std::string cache;  // default: <output>/responses.cache.jsonl
  std::string output = "out";
  std::uint64_t seed = 0;
  std::size_t workers = k_default_max_in_flight;
  std::size_t max_in_flight = k_default_max_in_flight;
  std::size_t tokens_per_minute = 0;  // 0 = unlimited
  std::size_t timeout_seconds = 60;
  std::string summaries;  // JSON object {session_id: summary}
};

/// Unknown keys and wrong types are InputErrors. The API key is never read
/// from the file.
RunConfig config_from_json(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
/// Config as recorded in manifests: no secrets, paths reduced to file names.
std::string config_manifest_json(const RunConfig& config);

std::vector<ConstructId> parse_construct_list(std::string_view csv);

struct AnalyzeOptions {
  std::string scores;
  std::string corpus;
  std::string output = "analysis";
  SessionRapportRule rapport_rule = SessionRapportRule::Mean;
  std::size_t emotion_components = 3;
  std::size_t empathy_components = 2;
  double alpha = 0.05;
};

/// Every file of the analysis bundle, by name (manifest excluded).
std::map<std::string, std::string> analysis_bundle(const ScoreStore& store, const Corpus& corpus,
                                                   const AnalyzeOptions& options);

struct SynthCommand {
  std::uint64_t seed = 7;
  std::size_t clients = 5;
  std::size_t sessions = 4;
  std::size_t utterances = 30;
  SynthOptions options;
  std::string output = "corpus.jsonl";
};

struct SynthAnnotationsCommand {
  std::string scores;
  std::size_t raters = 3;
  std::size_t per_stratum = 5;
  std::uint64_t seed = 11;
  std::string output = "annotations.csv";
};

int cmd_ingest(const std::string& path, std::ostream& out);
int cmd_synth(const SynthCommand& cmd, std::ostream& out);
int cmd_synth_annotations(const SynthAnnotationsCommand& cmd, std::ostream& out);
/// `provider` replaces the configured backend (tests).
int cmd_score(const RunConfig& config, std::ostream& out, std::shared_ptr<CompletionProvider> provider = nullptr,
              RetryPolicy retry = {});
int cmd_validate(const std::string& scores, const std::string& annotations, const std::string& output,
                 std::ostream& out);
int cmd_analyze(const AnalyzeOptions& options, std::ostream& out);
int cmd_report(const std::string& dir, std::ostream& out);

/// Runs `fn`, mapping exceptions to exit codes with a message on `err`.
int run_guarded(const std::function<int()>& fn, std::ostream& err);

}  // namespace tdyn
