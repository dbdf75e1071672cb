// One line per criterion: "PASS <n> <name>: <detail>" or "FAIL ...".

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "oracles.hpp"
#include "path_generator.hpp"
#include "tdyn/app.hpp"
#include "tdyn/reliability.hpp"
#include "tdyn/stats.hpp"
#include "tdyn/util.hpp"

using namespace tdyn;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

const std::string k_data = TDYN_TEST_DATA;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

// ---------------------------------------------------------------------------

Outcome prompt_fidelity() {
  const auto t0 = Clock::now();
  Session s{"g1", "c1", 1, {}};
  for (std::size_t i = 0; i < 20; ++i) {
    const bool therapist = i % 2 == 0;
    s.utterances.push_back({"g1", i, therapist ? Speaker::Therapist : Speaker::Client,
                            "<<" + std::string(therapist ? "T" : "C") + std::to_string(i) + ">>"});
  }
  std::size_t mismatches = 0;
  for (auto id : k_all_constructs) {
    RenderedPrompt p;
    switch (id) {
      case ConstructId::EmpathyEpitome:
      case ConstructId::EmpathyReflection: p = render_prompt(id, context_for(id, s, 6)); break;
      case ConstructId::SelfDisclosure: p = render_prompt(id, context_for(id, s, 7), "<<SUMMARY>>"); break;
      case ConstructId::Emotion: p = render_prompt(id, context_for(id, s, 11)); break;
      case ConstructId::Rapport: p = render_prompt(id, context_for(id, s, segment_session(s)[3])); break;
    }
    const fs::path base = fs::path(k_data) / "golden" / std::string(construct_name(id));
    mismatches += p.system_message != slurp(base.string() + ".system.txt");
    mismatches += p.user_message != slurp(base.string() + ".user.txt");
  }
  const auto bad = verify_template_manifest(slurp(fs::path(k_data) / ".." / "assets" / "templates" / "SHA256SUMS"));
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "10 golden files, " << mismatches << " mismatches; manifest " << (bad.empty() ? "verified" : "FAILED")
    << "; " << format_fixed(secs, 3) << " s";
  return {mismatches == 0 && bad.empty() && secs < 1.0, d.str()};
}

Outcome icc_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> dn(2, 12), dk(2, 6);
  std::normal_distribution<double> z;
  double max_diff = 0;
  std::size_t compared = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = dn(rng), k = dk(rng);
    std::vector<std::vector<double>> x(n, std::vector<double>(k));
    for (auto& row : x) {
      const double subject = 2 * z(rng);
      for (auto& v : row) v = subject + z(rng);
    }
    const double got = icc_2k(RatingMatrix::from_rows(x)).icc;
    max_diff = std::max(max_diff, std::abs(got - oracle::icc_ak(x)));
    ++compared;
  }
  bool perfect = true;
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t n = dn(rng), k = dk(rng);
    std::vector<std::vector<double>> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i].assign(k, std::round(7 * z(rng)) + static_cast<double>(i));
    perfect = perfect && icc_2k(RatingMatrix::from_rows(x)).icc == 1.0;
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << compared << " matrices, max |diff| " << max_diff << "; perfect agreement " << (perfect ? "== 1.0" : "!= 1.0")
    << "; " << format_fixed(secs, 3) << " s";
  return {max_diff <= 1e-10 && perfect && secs < 10, d.str()};
}

Outcome pearson_f1_oracle() {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> z;
  std::uniform_int_distribution<std::size_t> len(3, 60);
  double max_r = 0, max_f = 0;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = len(rng);
    const double slope = z(rng);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = z(rng);
      y[i] = slope * x[i] + z(rng);
    }
    max_r = std::max(max_r, std::abs(pearson(x, y) - oracle::pearson(x, y)));
  }
  std::uniform_real_distribution<double> u;
  for (int rep = 0; rep < 1000; ++rep) {
    const std::size_t n = len(rng);
    const double pg = u(rng), flip = u(rng) * 0.5;
    std::vector<std::string> gold(n), pred(n);
    for (std::size_t i = 0; i < n; ++i) {
      const bool g = u(rng) < pg;
      gold[i] = g ? "Reflection" : "Non-Reflection";
      pred[i] = (u(rng) < flip) != g ? "Reflection" : "Non-Reflection";
    }
    max_f = std::max(max_f, std::abs(f1_binary(gold, pred, "Reflection") - oracle::f1(gold, pred, "Reflection")));
  }
  std::ostringstream d;
  d << "1000 + 1000 cases, max |diff| pearson " << max_r << ", F1 " << max_f;
  return {max_r <= 1e-12 && max_f <= 1e-12, d.str()};
}

Outcome pca_recovery() {
  const auto t0 = Clock::now();
  double worst_corr = 1, worst_trace = 0, worst_score = 0;
  for (std::size_t factors : {2u, 3u}) {
    std::mt19937_64 rng(100 + factors);
    std::normal_distribution<double> z;
    const std::size_t per = 3, p = factors * per, n = 10000;
    const double strength[] = {0.9, 0.7, 0.5};
    NamedMatrix m{{}, Eigen::MatrixXd(n, static_cast<Eigen::Index>(p))};
    Eigen::MatrixXd planted = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(factors));
    for (std::size_t j = 0; j < p; ++j) {
      m.names.push_back("x" + std::to_string(j));
      planted(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(j / per)) = strength[j / per];
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> lat(factors);
      for (auto& v : lat) v = z(rng);
      for (std::size_t j = 0; j < p; ++j)
        m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = strength[j / per] * lat[j / per] + 0.3 * z(rng);
    }
    const auto r = pca(m, factors);
    for (Eigen::Index f = 0; f < planted.cols(); ++f) {
      double best = 0;
      for (Eigen::Index c = 0; c < r.loadings.cols(); ++c) {
        const Eigen::VectorXd a = planted.col(f), b = r.loadings.col(c);
        best = std::max(best, std::abs(oracle::pearson({a.data(), a.data() + a.size()}, {b.data(), b.data() + b.size()})));
      }
      worst_corr = std::min(worst_corr, best);
    }
    worst_trace = std::max(worst_trace, std::abs(r.eigenvalues.sum() - static_cast<double>(p)));
    const Eigen::MatrixXd s = component_scores(r, m);
    for (Eigen::Index a = 0; a < s.cols(); ++a)
      for (Eigen::Index b = a + 1; b < s.cols(); ++b) {
        const Eigen::VectorXd x = s.col(a), y = s.col(b);
        worst_score = std::max(worst_score,
                               std::abs(oracle::pearson({x.data(), x.data() + x.size()}, {y.data(), y.data() + y.size()})));
      }
  }
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "min loading corr " << format_fixed(worst_corr, 4) << ", |sum(eig) - p| " << worst_trace
    << ", max |score corr| " << worst_score << "; " << format_fixed(secs, 2) << " s";
  return {worst_corr >= 0.95 && worst_trace <= 1e-8 && worst_score <= 1e-8 && secs < 30, d.str()};
}

Outcome path_recovery() {
  const auto t0 = Clock::now();
  const auto betas = gen::reference_betas();
  const PathModelSpec spec;
  const std::size_t reps = 200;
  std::map<std::pair<std::string, std::string>, double> sum_est;
  std::size_t covered = 0, total = 0, null_hits = 0, null_total = 0;
  double single_max_dev = 0;
  for (std::size_t rep = 0; rep < reps; ++rep) {
    const auto d = gen::make(50000, 500, betas, 5000 + rep);
    const auto fit = fit_path_model(d.data, d.clusters, spec);
    for (const auto& c : fit.coefficients) {
      const double truth = gen::truth(betas, c.predictor, c.outcome);
      sum_est[{c.outcome, c.predictor}] += c.estimate;
      if (rep == 0) single_max_dev = std::max(single_max_dev, std::abs(c.estimate - truth));
      const double half = 1.959963984540054 * c.se;
      covered += c.estimate - half <= truth && truth <= c.estimate + half;
      ++total;
      if (truth == 0) {
        null_hits += c.p < 0.05;
        ++null_total;
      }
    }
  }
  double max_bias = 0;
  for (const auto& [key, s] : sum_est)
    max_bias = std::max(max_bias, std::abs(s / reps - gen::truth(betas, key.second, key.first)));
  const double coverage = static_cast<double>(covered) / static_cast<double>(total);
  const double fpr = static_cast<double>(null_hits) / static_cast<double>(null_total);
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << reps << " reps x 50000 rows / 500 clusters: max |mean beta_hat - beta| " << format_fixed(max_bias, 4)
    << " (single dataset max dev " << format_fixed(single_max_dev, 4) << "), coverage " << format_fixed(coverage, 4)
    << ", null FPR " << format_fixed(fpr, 4) << "; " << format_fixed(secs, 1) << " s";
  return {max_bias <= 0.01 && coverage >= 0.92 && coverage <= 0.98 && fpr >= 0.02 && fpr <= 0.08 && secs < 300,
          d.str()};
}

Outcome hypothesis_logic() {
  const auto r = hypothesis_report(fit_from_table(gen::reference_coefficients()));
  std::ostringstream d;
  for (const auto& h : r) d << h.id << " " << verdict_name(h.verdict) << (h.id == "H4" ? "" : ", ");
  const bool ok = r.size() == 4 && r[0].verdict == Verdict::Supported && r[1].verdict == Verdict::Unsupported &&
                  r[1].paths[0].p == 0.71 && r[2].verdict == Verdict::Supported &&
                  r[3].verdict == Verdict::Contradicted && r[3].paths[0].outcome == "self_directed" &&
                  r[3].paths[0].significant && r[3].paths[0].estimate < 0;
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------

std::map<std::string, std::string> bundle_files(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file() || e.path().filename() == "responses.cache.jsonl") continue;
    out[fs::relative(e.path(), root).string()] = slurp(e.path());
  }
  return out;
}

std::size_t provider_calls_in(const std::string& score_output) {
  const auto at = score_output.find("provider calls ");
  if (at == std::string::npos) throw std::runtime_error("no call count in score output");
  return std::stoul(score_output.substr(at + 15));
}

/// Runs the pipeline into `root`; returns provider calls of the score step.
std::size_t pipeline(const fs::path& root, const fs::path& corpus, std::size_t workers, const fs::path& cache) {
  std::ostringstream sink, score_out;
  RunConfig run;
  run.corpus = corpus.string();
  run.output = (root / "scores").string();
  run.cache = cache.string();
  run.workers = workers;
  if (cmd_score(run, score_out) != 0) throw std::runtime_error("score failed");
  SynthAnnotationsCommand ann;
  ann.scores = run.output;
  ann.output = (root / "annotations.csv").string();
  cmd_synth_annotations(ann, sink);
  if (cmd_validate(run.output, ann.output, (root / "validation").string(), sink) != 0)
    throw std::runtime_error("validate failed");
  AnalyzeOptions opts;
  opts.scores = run.output;
  opts.corpus = corpus.string();
  opts.output = (root / "analysis").string();
  if (cmd_analyze(opts, sink) != 0) throw std::runtime_error("analyze failed");
  return provider_calls_in(score_out.str());
}

Outcome end_to_end() {
  const fs::path work = fs::temp_directory_path() / "tdyn_acceptance_e2e";
  fs::remove_all(work);
  fs::create_directories(work);
  std::ostringstream sink;
  SynthCommand synth;
  synth.seed = 7;
  synth.clients = 5;
  synth.options.plant_disclosure_effect = true;
  synth.options.plant_emotion_effect = true;
  synth.output = (work / "corpus.jsonl").string();
  cmd_synth(synth, sink);

  const auto cold_seq = pipeline(work / "a", synth.output, 1, work / "a.cache.jsonl");
  const auto warm_par = pipeline(work / "b", synth.output, 8, work / "a.cache.jsonl");
  const auto cold_par = pipeline(work / "c", synth.output, 8, work / "c.cache.jsonl");
  const auto a = bundle_files(work / "a"), b = bundle_files(work / "b"), c = bundle_files(work / "c");
  std::ostringstream d;
  d << a.size() << " files; rerun " << (a == b ? "identical" : "DIFFERS") << ", sequential vs parallel "
    << (a == c ? "identical" : "DIFFERS") << "; provider calls cold " << cold_seq << " / " << cold_par << ", warm "
    << warm_par;
  return {a == b && a == c && warm_par == 0 && cold_seq > 0 && a.size() >= 20, d.str()};
}

Outcome parser_robustness() {
  const auto cases = nlohmann::json::parse(slurp(fs::path(k_data) / "fixtures" / "parser_cases.json"));
  std::size_t valid = 0, valid_ok = 0, bad = 0, bad_ok = 0;
  for (const auto& c : cases) {
    const auto id = *construct_from_name(c.at("construct").get<std::string>());
    const auto text = c.at("text").get<std::string>();
    if (c.contains("error")) {
      ++bad;
      try {
        parse_response(id, text);
      } catch (const ParseError& e) {
        bad_ok += parse_errc_name(e.code()) == c.at("error").get<std::string>();
      }
      continue;
    }
    ++valid;
    try {
      const std::vector<RawScore> one{parse_response(id, text)};
      valid_ok += aggregate(one) == c.at("expect").get<std::vector<double>>();
    } catch (const std::exception&) {
    }
  }
  std::ostringstream d;
  d << valid_ok << "/" << valid << " valid parsed as expected, " << bad_ok << "/" << bad
    << " corrupted rejected with the designated error";
  return {valid == 50 && bad == 5 && valid_ok == valid && bad_ok == bad, d.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"prompt fidelity", prompt_fidelity},       {"ICC(2,k) oracle", icc_oracle},
      {"Pearson/F1 oracles", pearson_f1_oracle},   {"PCA recovery", pca_recovery},
      {"path-model recovery", path_recovery},     {"hypothesis logic", hypothesis_logic},
      {"end-to-end determinism", end_to_end},     {"parser robustness", parser_robustness},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS " : "FAIL ") << i + 1 << ' ' << criteria[i].first << ": " << o.detail << std::endl;
  }
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << '\n';
  return failed ? 1 : 0;
}
