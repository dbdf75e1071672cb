#include "tdyn/app.hpp"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tdyn/reliability.hpp"
#include "tdyn/stats.hpp"
#include "tdyn/util.hpp"

namespace tdyn {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out << content;
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
}

/// Manifest with config, seed, template checksums, version, and digests of
/// inputs and outputs (by file name, so bundles compare across directories).
void write_manifest(const fs::path& dir, std::string_view command, const ojson& config,
                    const std::map<std::string, std::string>& inputs, const std::vector<std::string>& outputs) {
  ojson m;
  m["command"] = command;
  m["version"] = TDYN_VERSION;
  m["config"] = config;
  m["template_checksums"] = template_checksums();
  m["inputs"] = ojson::object();
  for (const auto& [name, path] : inputs) m["inputs"][name] = sha256_hex(read_file(path));
  m["outputs"] = ojson::object();
  for (const auto& name : outputs) m["outputs"][name] = sha256_hex(read_file(dir / name));
  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

std::map<std::string, std::string> digests_of(const fs::path& scores_path) {
  const fs::path dir = fs::is_directory(scores_path) ? scores_path : scores_path.parent_path();
  return {{"scores.jsonl", (dir / "scores.jsonl").string()}, {"scores.meta.json", (dir / "scores.meta.json").string()}};
}

Corpus load_corpus_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read corpus '" + path + "'");
  return parse_corpus(in);
}

ScoreStore load_scores(const std::string& path) {
  if (!fs::exists(path)) throw InputError("scores not found at '" + path + "'");
  try {
    return load_store(path);
  } catch (const std::exception& e) {
    throw InputError(std::string("cannot load scores: ") + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

std::vector<ConstructId> parse_construct_list(std::string_view csv) {
  std::vector<ConstructId> out;
  std::string item;
  std::istringstream in{std::string(csv)};
  while (std::getline(in, item, ',')) {
    auto id = construct_from_name(trim(item));
    if (!id) throw InputError("unknown construct '" + std::string(trim(item)) + "'");
    if (std::find(out.begin(), out.end(), *id) == out.end()) out.push_back(*id);
  }
  if (out.empty()) throw InputError("no constructs selected");
  return out;
}

RunConfig config_from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw InputError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw InputError("config must be a JSON object");
  RunConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "corpus") c.corpus = v.get<std::string>();
      else if (key == "backend") c.backend = v.get<std::string>();
      else if (key == "base_url") c.base_url = v.get<std::string>();
      else if (key == "model") c.model = v.get<std::string>();
      else if (key == "temperature") c.temperature = v.get<double>();
      else if (key == "completions") c.completions = v.get<std::size_t>();
      else if (key == "constructs") {
        c.constructs.clear();
        for (const auto& n : v) {
          auto id = construct_from_name(n.get<std::string>());
          if (!id) throw InputError("unknown construct '" + n.get<std::string>() + "'");
          c.constructs.push_back(*id);
        }
      } else if (key == "cache") c.cache = v.get<std::string>();
      else if (key == "output") c.output = v.get<std::string>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "workers") c.workers = v.get<std::size_t>();
      else if (key == "max_in_flight") c.max_in_flight = v.get<std::size_t>();
      else if (key == "tokens_per_minute") c.tokens_per_minute = v.get<std::size_t>();
      else if (key == "timeout_seconds") c.timeout_seconds = v.get<std::size_t>();
      else if (key == "summaries") c.summaries = v.get<std::string>();
      else if (key == "api_key") throw InputError(std::string("api_key is not read from config; set ") + k_api_key_env);
      else throw InputError("unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("config has a wrong value type: ") + e.what());
  }
  if (c.backend != "mock" && c.backend != "http") throw InputError("backend must be 'mock' or 'http'");
  if (c.completions < 1) throw InputError("completions must be >= 1");
  if (c.workers < 1 || c.max_in_flight < 1) throw InputError("workers and max_in_flight must be >= 1");
  if (c.constructs.empty()) throw InputError("no constructs selected");
  return c;
}

RunConfig load_config(const fs::path& path) { return config_from_json(read_file(path)); }

std::string config_manifest_json(const RunConfig& c) {
  ojson j;
  j["corpus"] = fs::path(c.corpus).filename().string();
  j["backend"] = c.backend;
  if (c.backend == "http") j["base_url"] = c.base_url;
  j["model"] = c.model;
  j["temperature"] = c.temperature;
  j["completions"] = c.completions;
  j["constructs"] = ojson::array();
  for (auto id : c.constructs) j["constructs"].push_back(construct_name(id));
  j["seed"] = c.seed;
  j["summaries"] = c.summaries.empty() ? "" : fs::path(c.summaries).filename().string();
  return j.dump();
}

// ---------------------------------------------------------------------------
// Commands

int cmd_ingest(const std::string& path, std::ostream& out) {
  const Corpus corpus = load_corpus_file(path);
  std::size_t client_utts = 0, therapist_utts = 0, unscorable = 0;
  for (const auto& s : corpus.sessions) {
    if (!s.scorable()) ++unscorable;
    for (const auto& u : s.utterances) (u.speaker == Speaker::Client ? client_utts : therapist_utts)++;
  }
  const double total = static_cast<double>(client_utts + therapist_utts);
  out << corpus.sessions.size() << " sessions, " << corpus.utterance_count() << " utterances\n";
  out << corpus.client_count() << " clients\n";
  out << "speaker balance: " << client_utts << " client (" << format_fixed(100.0 * client_utts / total, 1) << "%), "
      << therapist_utts << " therapist (" << format_fixed(100.0 * therapist_utts / total, 1) << "%)\n";
  if (unscorable) out << unscorable << " sessions lack one speaker and will not be scored\n";
  return k_exit_ok;
}

int cmd_synth(const SynthCommand& cmd, std::ostream& out) {
  const Corpus corpus = synth_corpus(cmd.seed, cmd.clients, cmd.sessions, cmd.utterances, cmd.options);
  const fs::path path(cmd.output);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, serialize_corpus(corpus));
  out << "wrote " << corpus.sessions.size() << " sessions, " << corpus.utterance_count() << " utterances to "
      << cmd.output << '\n';
  return k_exit_ok;
}

int cmd_synth_annotations(const SynthAnnotationsCommand& cmd, std::ostream& out) {
  const ScoreStore store = load_scores(cmd.scores);
  const auto annotations = simulate_annotations(store, cmd.raters, cmd.per_stratum, cmd.seed);
  const fs::path path(cmd.output);
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  write_file(path, annotations_csv(annotations));
  out << "wrote " << annotations.size() << " simulated ratings from " << cmd.raters << " raters to " << cmd.output
      << '\n';
  return k_exit_ok;
}

int cmd_score(const RunConfig& config, std::ostream& out, std::shared_ptr<CompletionProvider> provider,
              RetryPolicy retry) {
  if (config.corpus.empty()) throw InputError("no corpus given");
  const Corpus corpus = load_corpus_file(config.corpus);

  ScoringConfig scoring;
  scoring.constructs = config.constructs;
  scoring.completions = config.completions;
  scoring.model = config.model;
  scoring.temperature = config.temperature;
  scoring.workers = config.workers;
  if (!config.summaries.empty()) {
    try {
      scoring.summaries = nlohmann::json::parse(read_file(config.summaries)).get<std::map<std::string, std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError("summaries must be a JSON object of strings: " + std::string(e.what()));
    }
  }

  if (!provider) {
    if (config.backend == "mock") {
      provider = std::make_shared<MockProvider>();
    } else {
      const char* key = std::getenv(k_api_key_env);
      if (!key || !*key)
        throw BackendError(BackendErrc::Config, std::string("http backend needs ") + k_api_key_env);
      provider = std::make_shared<HttpProvider>(
          HttpConfig{config.base_url, key, std::chrono::seconds(config.timeout_seconds)});
    }
  }
  const fs::path dir(config.output);
  fs::create_directories(dir);
  const std::string cache_path = config.cache.empty() ? (dir / "responses.cache.jsonl").string() : config.cache;
  if (fs::path(cache_path).has_parent_path()) fs::create_directories(fs::path(cache_path).parent_path());
  auto cache = std::make_shared<ResponseCache>(cache_path);

  BackendOptions options;
  options.retry = std::move(retry);
  options.max_in_flight = config.max_in_flight;
  std::shared_ptr<PerMinuteTokenBudget> budget;
  if (config.tokens_per_minute) {
    budget = std::make_shared<PerMinuteTokenBudget>(config.tokens_per_minute);
    options.token_budget = [budget](std::size_t t) { budget->acquire(t); };
  }
  Backend backend(provider, cache, options);
  const ScoreStore store = score_corpus(corpus, backend, scoring);
  save_store(store, dir);

  std::string ledger = "construct,target_id,reason\n";
  std::size_t backend_failures = 0;
  for (const auto* r : store.failures()) {
    ledger += std::string(construct_name(r->score.construct)) + ',' + csv_escape(r->score.target.str()) + ',' +
              csv_escape(r->reason) + '\n';
    backend_failures += std::string_view(r->reason).starts_with("backend:");
  }
  write_file(dir / "failures.csv", ledger);
  write_manifest(dir, "score", ojson::parse(config_manifest_json(config)), {{"corpus", config.corpus}},
                 {"scores.jsonl", "scores.meta.json", "failures.csv"});

  out << "scored " << store.records().size() << " items";
  for (auto id : config.constructs)
    out << "; " << construct_name(id) << ' ' << store.count(id, RecordStatus::Ok) << " ok/"
        << store.count(id, RecordStatus::Failed) << " failed";
  out << '\n';
  out << "provider calls " << backend.provider_calls() << ", cache hits " << backend.cache_hits() << '\n';
  if (!store.failures().empty()) {
    out << "failure ledger (" << store.failures().size() << "):\n";
    std::size_t shown = 0;
    for (const auto* r : store.failures()) {
      if (shown++ == 10) {
        out << "  ... see failures.csv\n";
        break;
      }
      out << "  " << construct_name(r->score.construct) << ' ' << r->score.target.str() << ": " << r->reason << '\n';
    }
  }
  if (!store.records().empty() && backend_failures == store.records().size()) return k_exit_backend;
  return k_exit_ok;
}

int cmd_validate(const std::string& scores, const std::string& annotations, const std::string& output,
                 std::ostream& out) {
  if (!fs::exists(annotations)) throw InputError("annotation file '" + annotations + "' not found");
  const ScoreStore store = load_scores(scores);
  std::vector<Annotation> rows;
  try {
    rows = parse_annotations(read_file(annotations));
  } catch (const ReliabilityError& e) {
    throw InputError(e.what());
  }
  const ReliabilityReport report = reliability_report(store, rows);
  const std::string text = report_text(report), csv = report_csv(report);

  const fs::path dir(output);
  fs::create_directories(dir);
  write_file(dir / "reliability.txt", text);
  write_file(dir / "reliability.csv", csv);
  auto inputs = digests_of(scores);
  inputs["annotations"] = annotations;
  ojson cfg;
  cfg["annotations"] = fs::path(annotations).filename().string();
  cfg["scores_meta"] = ojson::parse(read_file(inputs["scores.meta.json"]));
  write_manifest(dir, "validate", cfg, inputs, {"reliability.txt", "reliability.csv"});
  out << text;
  return k_exit_ok;
}

// ---------------------------------------------------------------------------
// Analysis bundle

namespace {

NamedMatrix column_block(const std::vector<std::string>& names, const std::vector<std::vector<double>>& cols) {
  NamedMatrix m{names, Eigen::MatrixXd(cols.empty() ? 0 : static_cast<Eigen::Index>(cols[0].size()),
                                       static_cast<Eigen::Index>(cols.size()))};
  for (std::size_t j = 0; j < cols.size(); ++j)
    for (std::size_t i = 0; i < cols[j].size(); ++i)
      m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = cols[j][i];
  return m;
}

/// Drops constant columns, noting each.
NamedMatrix drop_constant(const NamedMatrix& m, std::vector<std::string>& notes, std::string_view what) {
  std::vector<std::string> keep;
  for (std::size_t j = 0; j < m.names.size(); ++j) {
    const auto col = m.values.col(static_cast<Eigen::Index>(j));
    if (col.size() > 0 && (col.array() == col(0)).all())
      notes.push_back(std::string(what) + ": dropped constant variable '" + m.names[j] + "'");
    else
      keep.push_back(m.names[j]);
  }
  return m.select(keep);
}

struct CompositeBlock {
  std::map<std::string, Eigen::VectorXd> scores;
  std::optional<PcaResult> pca;
};

/// PCA on `m`, then composite scores by matched component. Unmatched
/// single-variable composites fall back to the z-scored raw variable.
CompositeBlock composites_for(const NamedMatrix& raw, std::size_t n_components, const std::vector<CompositeSpec>& specs,
                              std::vector<std::string>& notes, std::string_view what) {
  CompositeBlock out;
  const NamedMatrix m = drop_constant(raw, notes, what);
  if (m.names.empty() || static_cast<Eigen::Index>(m.names.size()) >= m.values.rows()) {
    notes.push_back(std::string(what) + ": not enough data for PCA");
    return out;
  }
  std::size_t k = std::min(n_components, m.names.size());
  if (k < n_components)
    notes.push_back(std::string(what) + ": retaining " + std::to_string(k) + " components (" +
                    std::to_string(m.names.size()) + " variables)");
  PcaResult p;
  while (true) {
    try {
      p = pca(m, k);
      break;
    } catch (const StatsError& e) {
      if (e.code() != StatsErrc::RankExceeded || k == 1) throw;
      --k;
      notes.push_back(std::string(what) + ": rank-deficient, retaining " + std::to_string(k) + " components");
    }
  }
  std::vector<CompositeSpec> present;
  for (auto spec : specs) {
    std::erase_if(spec.members, [&](const auto& mem) {
      return std::find(m.names.begin(), m.names.end(), mem.first) == m.names.end();
    });
    if (!spec.members.empty()) present.push_back(std::move(spec));
  }
  const auto matches = match_components(p, present);
  const Eigen::MatrixXd scores = component_scores(p, m);
  for (const auto& mt : matches) {
    p.component_names[mt.component] = mt.name;
    out.scores[mt.name] = mt.sign * scores.col(static_cast<Eigen::Index>(mt.component));
  }
  const auto z = standardize(m);
  for (const auto& spec : present) {
    if (out.scores.count(spec.name)) continue;
    if (spec.members.size() == 1) {
      out.scores[spec.name] = spec.members[0].second * z.z.col(static_cast<Eigen::Index>(m.column(spec.members[0].first)));
      notes.push_back(std::string(what) + ": '" + spec.name + "' has no component; using z-scored " +
                      spec.members[0].first);
    } else {
      notes.push_back(std::string(what) + ": '" + spec.name + "' has no component");
    }
  }
  out.pca = std::move(p);
  return out;
}

}  // namespace

std::map<std::string, std::string> analysis_bundle(const ScoreStore& store, const Corpus& corpus,
                                                   const AnalyzeOptions& options) {
  std::map<std::string, std::string> files;
  std::vector<std::string> notes;
  const AnalysisRowSet set = build_analysis_rows(store, corpus, options.rapport_rule);
  const auto& rows = set.rows;
  files["analysis_rows.csv"] = analysis_rows_csv(rows);

  {
    const auto& c = set.coverage;
    std::ostringstream cov;
    cov << "client_utterances," << c.client_utterances << "\nwith_preceding_therapist," << c.with_preceding_therapist
        << "\nmissing_scores," << c.missing_scores << "\nrows," << c.rows << "\nrows_missing_rapport_prev,"
        << c.rows_missing_rapport_prev << "\nsession_rapport_rule," << session_rapport_rule_name(options.rapport_rule)
        << '\n';
    files["coverage.csv"] = cov.str();
  }

  // Rapport by session order.
  {
    std::map<int, std::pair<std::size_t, double>> trend;
    for (const auto& s : corpus.sessions) {
      try {
        const double r = session_rapport(store, s, options.rapport_rule);
        auto& [n, sum] = trend[s.session_order];
        ++n;
        sum += r;
      } catch (const PipelineError&) {
      }
    }
    std::string csv = "session_order,sessions,mean_rapport\n";
    for (const auto& [order, agg] : trend)
      csv += std::to_string(order) + ',' + std::to_string(agg.first) + ',' +
             format_fixed(agg.second / static_cast<double>(agg.first)) + '\n';
    files["rapport_trend.csv"] = csv;
  }

  std::string hypotheses_txt, hypotheses_js = "[]\n";
  if (rows.size() < 3) {
    notes.push_back("fewer than 3 analysis rows; PCA and path model skipped");
  } else {
    std::vector<std::string> emo_names;
    std::vector<std::vector<double>> emo_cols(9);
    for (auto n : k_emotion_names) emo_names.push_back(to_lower(n));
    for (const auto& r : rows)
      for (std::size_t e = 0; e < 9; ++e) emo_cols[e].push_back(r.emotions[e]);
    const NamedMatrix emotions = column_block(emo_names, emo_cols);

    const std::vector<std::string> emp_names{"emotional_reactions", "interpretations", "explorations", "reflection"};
    std::vector<std::vector<double>> emp_cols(4);
    for (const auto& r : rows) {
      emp_cols[0].push_back(r.emotional_reactions);
      emp_cols[1].push_back(r.interpretations);
      emp_cols[2].push_back(r.explorations);
      emp_cols[3].push_back(r.reflection);
    }
    const NamedMatrix empathy = column_block(emp_names, emp_cols);

    try {
      const NamedMatrix e = drop_constant(emotions, notes, "emotion correlation");
      files["emotion_correlation.csv"] = matrix_csv(e.names, correlation_matrix(e));
    } catch (const StatsError& err) {
      notes.push_back(std::string("emotion correlation: ") + err.what());
    }

    CompositeBlock emo, emp;
    std::vector<std::string> ignored;
    try {
      emo = composites_for(emotions, options.emotion_components, emotion_composites(), notes, "emotion PCA");
      const std::size_t alt = options.emotion_components == 3 ? 2 : 3;
      auto other = composites_for(emotions, alt, emotion_composites(), ignored, "emotion PCA");
      if (emo.pca) {
        files["emotion_loadings_" + std::to_string(emo.pca->components()) + ".csv"] = loadings_csv(*emo.pca);
        files["emotion_scree.csv"] = scree_csv(*emo.pca);
      }
      if (other.pca) files["emotion_loadings_" + std::to_string(other.pca->components()) + ".csv"] = loadings_csv(*other.pca);
    } catch (const StatsError& err) {
      notes.push_back(std::string("emotion PCA: ") + err.what());
    }
    try {
      emp = composites_for(empathy, options.empathy_components, empathy_composites(), notes, "empathy PCA");
      if (emp.pca) {
        files["empathy_loadings.csv"] = loadings_csv(*emp.pca);
        files["empathy_scree.csv"] = scree_csv(*emp.pca);
      }
    } catch (const StatsError& err) {
      notes.push_back(std::string("empathy PCA: ") + err.what());
    }

    // Path model on rows with a previous-session rapport.
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (rows[i].rapport_prev) keep.push_back(i);
    notes.push_back(std::to_string(rows.size() - keep.size()) + " rows without previous-session rapport excluded from the path model");

    PathModelSpec spec;
    std::vector<std::string> names;
    std::vector<std::vector<double>> cols;
    auto add = [&](const std::string& name, auto&& value_of) {
      std::vector<double> col;
      for (auto i : keep) col.push_back(value_of(i));
      names.push_back(name);
      cols.push_back(std::move(col));
    };
    std::vector<std::string> outcomes, predictors;
    for (const auto& o : spec.outcomes) {
      if (o == var::disclosure) {
        add(o, [&](std::size_t i) { return rows[i].disclosure; });
      } else if (emo.scores.count(o)) {
        const auto& s = emo.scores.at(o);
        add(o, [&](std::size_t i) { return s(static_cast<Eigen::Index>(i)); });
      } else {
        notes.push_back("outcome '" + o + "' unavailable");
        continue;
      }
      outcomes.push_back(o);
    }
    for (const auto& p : spec.predictors) {
      if (p == var::log_session) {
        add(p, [&](std::size_t i) { return rows[i].log_session; });
      } else if (p == var::rapport_prev) {
        add(p, [&](std::size_t i) { return *rows[i].rapport_prev; });
      } else if (emp.scores.count(p)) {
        const auto& s = emp.scores.at(p);
        add(p, [&](std::size_t i) { return s(static_cast<Eigen::Index>(i)); });
      } else {
        notes.push_back("predictor '" + p + "' unavailable");
        continue;
      }
      predictors.push_back(p);
    }
    NamedMatrix data = column_block(names, cols);
    std::vector<std::string> clusters;
    for (auto i : keep) clusters.push_back(rows[i].session_id);

    auto nonconstant = [&](std::vector<std::string>& vars, std::string_view role) {
      std::erase_if(vars, [&](const std::string& v) {
        const auto col = data.values.col(static_cast<Eigen::Index>(data.column(v)));
        const bool constant = col.size() == 0 || (col.array() == col(0)).all();
        if (constant) notes.push_back(std::string(role) + " '" + v + "' is constant; dropped from the path model");
        return constant;
      });
    };
    if (!keep.empty()) {
      nonconstant(outcomes, "outcome");
      nonconstant(predictors, "predictor");
    }
    spec.outcomes = outcomes;
    spec.predictors = predictors;
    std::optional<PathModelFit> fit;
    if (keep.empty() || outcomes.empty() || predictors.empty()) {
      notes.push_back("path model not estimable: no usable rows, outcomes, or predictors");
    } else {
      try {
        fit = fit_path_model(data, clusters, spec);
      } catch (const StatsError& err) {
        notes.push_back(std::string("path model: ") + err.what());
      }
    }
    if (fit) {
      files["path_model.csv"] = path_model_csv(*fit);
      files["path_model.txt"] = path_model_text(*fit);
      files["residual_correlation.csv"] = matrix_csv(fit->outcomes, fit->residual_correlation);
      try {
        const auto h = hypothesis_report(*fit, options.alpha);
        hypotheses_txt = hypotheses_text(h);
        hypotheses_js = hypotheses_json(h);
      } catch (const StatsError& err) {
        hypotheses_txt = std::string("hypotheses not evaluated: ") + err.what() + "\n";
      }
    } else {
      hypotheses_txt = "hypotheses not evaluated: no path model fit\n";
    }
  }
  if (hypotheses_txt.empty()) hypotheses_txt = "hypotheses not evaluated: no path model fit\n";
  files["hypotheses.txt"] = hypotheses_txt;
  files["hypotheses.json"] = hypotheses_js;

  std::string notes_txt = "session rapport rule: " + std::string(session_rapport_rule_name(options.rapport_rule)) + "\n";
  for (const auto& n : notes) notes_txt += n + '\n';
  files["notes.txt"] = notes_txt;
  return files;
}

int cmd_analyze(const AnalyzeOptions& options, std::ostream& out) {
  if (options.corpus.empty()) throw InputError("analyze needs the corpus (--corpus)");
  const ScoreStore store = load_scores(options.scores);
  const Corpus corpus = load_corpus_file(options.corpus);
  const auto files = analysis_bundle(store, corpus, options);

  const fs::path dir(options.output);
  fs::create_directories(dir);
  std::vector<std::string> names;
  for (const auto& [name, content] : files) {
    write_file(dir / name, content);
    names.push_back(name);
  }
  auto inputs = digests_of(options.scores);
  inputs["corpus"] = options.corpus;
  ojson cfg;
  cfg["corpus"] = fs::path(options.corpus).filename().string();
  cfg["rapport_rule"] = session_rapport_rule_name(options.rapport_rule);
  cfg["emotion_components"] = options.emotion_components;
  cfg["empathy_components"] = options.empathy_components;
  cfg["alpha"] = options.alpha;
  cfg["scores_meta"] = ojson::parse(read_file(inputs["scores.meta.json"]));
  write_manifest(dir, "analyze", cfg, inputs, names);

  out << "wrote " << names.size() << " files to " << options.output << '\n';
  if (auto it = files.find("path_model.txt"); it != files.end()) out << it->second;
  out << files.at("hypotheses.txt");
  return k_exit_ok;
}

int cmd_report(const std::string& dir, std::ostream& out) {
  if (!fs::is_directory(dir)) throw InputError("'" + dir + "' is not a directory");
  bool any = false;
  for (const char* name : {"reliability.txt", "coverage.csv", "path_model.txt", "hypotheses.txt", "notes.txt"}) {
    const fs::path p = fs::path(dir) / name;
    if (!fs::exists(p)) continue;
    any = true;
    out << "== " << name << '\n' << read_file(p);
  }
  if (!any) throw InputError("no report files in '" + dir + "'");
  return k_exit_ok;
}

int run_guarded(const std::function<int()>& fn, std::ostream& err) {
  try {
    return fn();
  } catch (const CorpusError& e) {
    err << "error: " << e.what() << '\n';
    return k_exit_input;
  } catch (const InputError& e) {
    err << "error: " << e.what() << '\n';
    return k_exit_input;
  } catch (const BackendError& e) {
    err << "backend error: " << e.what() << '\n';
    return k_exit_backend;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return k_exit_internal;
  }
}

}  // namespace tdyn
