#include <iostream>

#include "CLI11.hpp"
#include "tdyn/app.hpp"

using namespace tdyn;

int main(int argc, char** argv) {
  CLI::App app{"Score therapy transcripts with LLM prompts and analyze the scores", "tdyn"};
  app.set_version_flag("--version", std::string(TDYN_VERSION));
  app.require_subcommand(1);

  std::string ingest_path;
  auto* ingest = app.add_subcommand("ingest", "Validate a transcript file and print counts");
  ingest->add_option("corpus", ingest_path, "Transcript JSONL")->required();

  SynthCommand synth_cmd;
  SynthAnnotationsCommand ann_cmd;
  std::string annotations_from;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus, or simulated annotations for a score store");
  synth->add_option("--seed", synth_cmd.seed, "RNG seed")->capture_default_str();
  synth->add_option("--clients", synth_cmd.clients)->capture_default_str();
  synth->add_option("--sessions", synth_cmd.sessions, "Sessions per client")->capture_default_str();
  synth->add_option("--utterances", synth_cmd.utterances, "Utterances per session")->capture_default_str();
  synth->add_flag("--plant-disclosure", synth_cmd.options.plant_disclosure_effect,
                  "Disclosure depends on the preceding therapist move");
  synth->add_flag("--plant-emotion", synth_cmd.options.plant_emotion_effect,
                  "Self-directed emotion depends on preceding empathy");
  synth->add_flag("--constant-rapport", synth_cmd.options.constant_rapport, "No rapport cues in any session");
  synth->add_option("--annotations-from", annotations_from,
                    "Score store; writes simulated rater annotations instead of a corpus");
  synth->add_option("--raters", ann_cmd.raters)->capture_default_str();
  synth->add_option("--per-stratum", ann_cmd.per_stratum)->capture_default_str();
  synth->add_option("-o,--out", synth_cmd.output, "Output file")->required();

  RunConfig run;
  std::string config_path, constructs_csv, backend, model, base_url, cache, output, corpus, summaries;
  std::optional<double> temperature;
  std::optional<std::size_t> completions, workers, max_in_flight, tpm;
  std::optional<std::uint64_t> seed;
  auto* score = app.add_subcommand("score", "Score a corpus into a score store");
  score->add_option("--config", config_path, "Run config JSON (flags override it)");
  score->add_option("--corpus", corpus);
  score->add_option("--backend", backend, "mock | http");
  score->add_option("--base-url", base_url);
  score->add_option("--model", model);
  score->add_option("--temperature", temperature);
  score->add_option("--completions", completions, "Completions per item");
  score->add_option("--constructs", constructs_csv, "Comma-separated construct names");
  score->add_option("--cache", cache, "Response cache JSONL");
  score->add_option("--workers", workers);
  score->add_option("--max-in-flight", max_in_flight);
  score->add_option("--tokens-per-minute", tpm);
  score->add_option("--summaries", summaries, "JSON object of session summaries");
  score->add_option("--seed", seed);
  score->add_option("-o,--out", output, "Output directory");

  std::string v_scores, v_annotations, v_out = "validation";
  auto* validate = app.add_subcommand("validate", "Compare model scores with human annotations");
  validate->add_option("--scores", v_scores, "Score store directory")->required();
  validate->add_option("--annotations", v_annotations, "Annotation CSV")->required();
  validate->add_option("-o,--out", v_out)->capture_default_str();

  AnalyzeOptions analyze_opts;
  std::string rapport_rule = "mean";
  auto* analyze = app.add_subcommand("analyze", "PCA, path model and hypothesis report");
  analyze->add_option("--scores", analyze_opts.scores, "Score store directory")->required();
  analyze->add_option("--corpus", analyze_opts.corpus, "Transcript JSONL")->required();
  analyze->add_option("-o,--out", analyze_opts.output)->capture_default_str();
  analyze->add_option("--rapport-rule", rapport_rule, "mean | last | max")->capture_default_str();
  analyze->add_option("--emotion-components", analyze_opts.emotion_components)->capture_default_str();
  analyze->add_option("--empathy-components", analyze_opts.empathy_components)->capture_default_str();
  analyze->add_option("--alpha", analyze_opts.alpha)->capture_default_str();

  std::string report_dir;
  auto* report = app.add_subcommand("report", "Print the text reports in an output directory");
  report->add_option("dir", report_dir)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : k_exit_input;
  }

  return run_guarded(
      [&]() -> int {
        if (*ingest) return cmd_ingest(ingest_path, std::cout);
        if (*synth) {
          if (annotations_from.empty()) return cmd_synth(synth_cmd, std::cout);
          ann_cmd.scores = annotations_from;
          ann_cmd.seed = synth_cmd.seed;
          ann_cmd.output = synth_cmd.output;
          return cmd_synth_annotations(ann_cmd, std::cout);
        }
        if (*score) {
          if (!config_path.empty()) run = load_config(config_path);
          if (!corpus.empty()) run.corpus = corpus;
          if (!backend.empty()) run.backend = backend;
          if (!base_url.empty()) run.base_url = base_url;
          if (!model.empty()) run.model = model;
          if (!constructs_csv.empty()) run.constructs = parse_construct_list(constructs_csv);
          if (!cache.empty()) run.cache = cache;
          if (!output.empty()) run.output = output;
          if (!summaries.empty()) run.summaries = summaries;
          if (temperature) run.temperature = *temperature;
          if (completions) run.completions = *completions;
          if (workers) run.workers = *workers;
          if (max_in_flight) run.max_in_flight = *max_in_flight;
          if (tpm) run.tokens_per_minute = *tpm;
          if (seed) run.seed = *seed;
          if (run.backend != "mock" && run.backend != "http") throw InputError("backend must be 'mock' or 'http'");
          if (run.completions < 1) throw InputError("completions must be >= 1");
          if (run.workers < 1 || run.max_in_flight < 1) throw InputError("workers and max_in_flight must be >= 1");
          return cmd_score(run, std::cout);
        }
        if (*validate) return cmd_validate(v_scores, v_annotations, v_out, std::cout);
        if (*analyze) {
          auto rule = session_rapport_rule_from_name(rapport_rule);
          if (!rule) throw InputError("unknown rapport rule '" + rapport_rule + "'");
          analyze_opts.rapport_rule = *rule;
          return cmd_analyze(analyze_opts, std::cout);
        }
        return cmd_report(report_dir, std::cout);
      },
      std::cerr);
}
