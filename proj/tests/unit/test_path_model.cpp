#include <random>

#include "doctest.h"
#include "json.hpp"
#include "path_generator.hpp"
#include "tdyn/stats.hpp"

using namespace tdyn;

namespace {

std::vector<PathCoefficient> reference_table() { return gen::reference_coefficients(); }

/// HC1 by explicit normal equations, one outcome.
std::vector<double> hc1_se(const Eigen::MatrixXd& xs, const Eigen::VectorXd& y) {
  const Eigen::Index n = xs.rows(), k = xs.cols() + 1;
  Eigen::MatrixXd x(n, k);
  x << Eigen::VectorXd::Ones(n), xs;
  const Eigen::MatrixXd xtx_inv = (x.transpose() * x).inverse();
  const Eigen::VectorXd b = xtx_inv * x.transpose() * y;
  Eigen::MatrixXd meat = Eigen::MatrixXd::Zero(k, k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double e = y(i) - x.row(i).dot(b);
    meat += e * e * x.row(i).transpose() * x.row(i);
  }
  const Eigen::MatrixXd v = static_cast<double>(n) / static_cast<double>(n - k) * xtx_inv * meat * xtx_inv;
  std::vector<double> se;
  for (Eigen::Index j = 1; j < k; ++j) se.push_back(std::sqrt(v(j, j)));
  return se;
}

double naive_se(const Eigen::MatrixXd& xs, const Eigen::VectorXd& y, Eigen::Index j) {
  const Eigen::Index n = xs.rows(), k = xs.cols() + 1;
  Eigen::MatrixXd x(n, k);
  x << Eigen::VectorXd::Ones(n), xs;
  const Eigen::MatrixXd xtx_inv = (x.transpose() * x).inverse();
  const Eigen::VectorXd b = xtx_inv * x.transpose() * y;
  const double s2 = (y - x * b).squaredNorm() / static_cast<double>(n - k);
  return std::sqrt(s2 * xtx_inv(j + 1, j + 1));
}

Verdict verdict_of(const std::vector<HypothesisResult>& r, const std::string& id) {
  for (const auto& h : r)
    if (h.id == id) return h.verdict;
  FAIL("no " << id);
  return Verdict::Unsupported;
}

}  // namespace

TEST_CASE("normal p-values") {
  CHECK(normal_two_sided_p(0) == 1.0);
  CHECK(normal_two_sided_p(1.959963984540054) == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(normal_two_sided_p(-2.5758293035489) == doctest::Approx(0.01).epsilon(1e-10));
  CHECK(std::isnan(normal_two_sided_p(std::nan(""))));
}

TEST_CASE("singleton clusters reduce CR1 to HC1") {
  auto d = gen::make(300, 300, gen::reference_betas(), 4, 0.0);
  std::vector<std::string> singletons;
  for (int i = 0; i < 300; ++i) singletons.push_back(std::to_string(i));
  PathModelSpec spec;
  spec.standardize = false;
  const auto fit = fit_path_model(d.data, singletons, spec);
  CHECK(fit.n_clusters == 300);
  const Eigen::MatrixXd xs = d.data.select(spec.predictors).values;
  for (const auto& o : spec.outcomes) {
    const auto se = hc1_se(xs, d.data.values.col(static_cast<Eigen::Index>(d.data.column(o))));
    for (std::size_t j = 0; j < spec.predictors.size(); ++j)
      CHECK(fit.find(o, spec.predictors[j])->se == doctest::Approx(se[j]).epsilon(1e-10));
  }
}

TEST_CASE("row duplication keeps betas and does not shrink clustered SEs") {
  auto d = gen::make(2000, 40, gen::reference_betas(), 9, 0.2);
  NamedMatrix dup{d.data.names, Eigen::MatrixXd(4000, d.data.values.cols())};
  dup.values << d.data.values, d.data.values;
  auto clusters = d.clusters;
  clusters.insert(clusters.end(), d.clusters.begin(), d.clusters.end());
  const auto a = fit_path_model(d.data, d.clusters);
  const auto b = fit_path_model(dup, clusters);
  const PathModelSpec spec;
  const auto za = standardize(d.data.select(spec.predictors)).z;
  const auto zb = standardize(dup.select(spec.predictors)).z;
  const auto ya = standardize(d.data.select({"disclosure"})).z;
  const auto yb = standardize(dup.select({"disclosure"})).z;
  for (std::size_t i = 0; i < a.coefficients.size(); ++i) {
    CHECK(b.coefficients[i].estimate == doctest::Approx(a.coefficients[i].estimate).epsilon(1e-10));
    const double ratio = b.coefficients[i].se / a.coefficients[i].se;
    CHECK(ratio > 0.97);
    CHECK(ratio < 1.03);
  }
  const double naive_ratio = naive_se(zb, yb.col(0), 3) / naive_se(za, ya.col(0), 3);
  CHECK(naive_ratio == doctest::Approx(std::sqrt(0.5)).epsilon(0.01));
}

TEST_CASE("positive rescaling of a predictor leaves standardized fit unchanged") {
  auto d = gen::make(1000, 20, gen::reference_betas(), 2);
  const auto a = fit_path_model(d.data, d.clusters);
  d.data.values.col(static_cast<Eigen::Index>(d.data.column("empathy"))) *= 37.0;
  d.data.values.col(static_cast<Eigen::Index>(d.data.column("empathy"))).array() += 5.0;
  const auto b = fit_path_model(d.data, d.clusters);
  for (std::size_t i = 0; i < a.coefficients.size(); ++i) {
    CHECK(b.coefficients[i].estimate == doctest::Approx(a.coefficients[i].estimate).epsilon(1e-9));
    CHECK(b.coefficients[i].se == doctest::Approx(a.coefficients[i].se).epsilon(1e-9));
  }
}

TEST_CASE("fit structure and residual correlation") {
  const auto d = gen::make(2000, 50, gen::reference_betas(), 3);
  const auto fit = fit_path_model(d.data, d.clusters);
  CHECK(fit.coefficients.size() == 16);
  CHECK(fit.n == 2000);
  CHECK(fit.n_clusters == 50);
  CHECK(fit.coefficients[0].outcome == "self_directed");
  CHECK(fit.coefficients[0].predictor == "log_session");
  for (const auto& c : fit.coefficients) {
    CHECK(c.se > 0);
    CHECK(c.p >= 0);
    CHECK(c.p <= 1);
    CHECK(c.z == doctest::Approx(c.estimate / c.se));
  }
  const auto& rc = fit.residual_correlation;
  CHECK((rc - rc.transpose()).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(rc).eigenvalues().minCoeff() > -1e-12);
  CHECK(fit.find("disclosure", "empathy")->estimate == doctest::Approx(0.09).epsilon(0.5));
  CHECK(fit.find("nope", "empathy") == nullptr);

  const auto csv = path_model_csv(fit);
  CHECK(csv.rfind("outcome,predictor,estimate,se,z,p\nself_directed,log_session,", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 17);
  const auto text = path_model_text(fit);
  CHECK(text.find("n = 2000, clusters = 50") != std::string::npos);
  CHECK(text.find("empathy") != std::string::npos);
}

TEST_CASE("path model errors") {
  auto d = gen::make(100, 5, {}, 1);
  CHECK_THROWS_AS(fit_path_model(d.data, std::vector<std::string>(100, "one")), StatsError);
  CHECK_THROWS_AS(fit_path_model(d.data, std::vector<std::string>(99, "x")), StatsError);
  auto sing = d.data;
  sing.values.col(1) = sing.values.col(2) * 2;
  PathModelSpec raw;
  raw.standardize = false;
  try {
    fit_path_model(sing, d.clusters, raw);
    FAIL("no error");
  } catch (const StatsError& e) {
    CHECK(e.code() == StatsErrc::Singular);
  }
  PathModelSpec overlap;
  overlap.predictors.push_back("disclosure");
  CHECK_THROWS_AS(fit_path_model(d.data, d.clusters, overlap), StatsError);
}

TEST_CASE("published estimates give the published verdicts") {
  const auto fit = fit_from_table(reference_table());
  CHECK(std::isnan(fit.find("disclosure", "empathy")->z));
  const auto r = hypothesis_report(fit);
  CHECK(verdict_of(r, "H1") == Verdict::Supported);
  CHECK(verdict_of(r, "H2") == Verdict::Unsupported);
  CHECK(verdict_of(r, "H3") == Verdict::Supported);
  CHECK(verdict_of(r, "H4") == Verdict::Contradicted);
  CHECK(r[1].paths[0].p == 0.71);
  CHECK(r[3].paths[0].estimate == -0.02);
  CHECK(r[3].paths[0].significant);
  CHECK_FALSE(r[3].paths[1].significant);

  const auto text = hypotheses_text(r);
  CHECK(text.find("H4: contradicted") != std::string::npos);
  CHECK(text.find("H2: not supported") != std::string::npos);
  const auto j = nlohmann::json::parse(hypotheses_json(r));
  CHECK(j.size() == 4);
  CHECK(j[0]["verdict"] == "supported");
  CHECK(j[3]["paths"][0]["significant"] == true);
}

TEST_CASE("verdict rules") {
  auto entries = reference_table();
  for (auto& e : entries) {
    e.estimate = 0;
    e.p = 1;
  }
  for (const auto& h : hypothesis_report(fit_from_table(entries))) CHECK(h.verdict == Verdict::Unsupported);

  auto partial = entries;
  for (auto& e : partial)
    if (e.outcome == "disclosure" && e.predictor == "empathy") {
      e.estimate = 0.2;
      e.p = 0.001;
    }
  CHECK(verdict_of(hypothesis_report(fit_from_table(partial)), "H1") == Verdict::Partial);
  // significance is p <= alpha
  auto edge = entries;
  for (auto& e : edge)
    if (e.predictor == "rapport_prev" && e.outcome == "disclosure") {
      e.estimate = 0.1;
      e.p = 0.05;
    }
  CHECK(verdict_of(hypothesis_report(fit_from_table(edge)), "H2") == Verdict::Supported);
  CHECK(verdict_of(hypothesis_report(fit_from_table(edge), 0.01), "H2") == Verdict::Unsupported);

  entries.pop_back();
  try {
    hypothesis_report(fit_from_table(entries));
    FAIL("no error");
  } catch (const StatsError& e) {
    CHECK(e.code() == StatsErrc::MissingPath);
  }
}

TEST_CASE("planted H1-only effects are flagged as H1 only") {
  const gen::Betas h1{{{"empathy", "disclosure"}, 0.1}, {{"exploration", "disclosure"}, 0.1}};
  const auto d = gen::make(20000, 200, h1, 17);
  const auto r = hypothesis_report(fit_path_model(d.data, d.clusters), 0.001);
  CHECK(verdict_of(r, "H1") == Verdict::Supported);
  CHECK(verdict_of(r, "H2") == Verdict::Unsupported);
  CHECK(verdict_of(r, "H3") == Verdict::Unsupported);
  CHECK(verdict_of(r, "H4") == Verdict::Unsupported);
}
