#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "tdyn/stats.hpp"
#include "tdyn/util.hpp"

namespace tdyn {

double normal_two_sided_p(double z) {
  if (std::isnan(z)) return std::numeric_limits<double>::quiet_NaN();
  return std::erfc(std::abs(z) / std::sqrt(2.0));
}

const PathCoefficient* PathModelFit::find(std::string_view outcome, std::string_view predictor) const {
  for (const auto& c : coefficients)
    if (c.outcome == outcome && c.predictor == predictor) return &c;
  return nullptr;
}

PathModelFit fit_path_model(const NamedMatrix& data, const std::vector<std::string>& clusters,
                            const PathModelSpec& spec) {
  const auto n = data.values.rows();
  if (static_cast<std::size_t>(n) != clusters.size())
    throw StatsError(StatsErrc::ColumnMismatch, "cluster labels do not match row count");
  for (const auto& o : spec.outcomes)
    if (std::find(spec.predictors.begin(), spec.predictors.end(), o) != spec.predictors.end())
      throw StatsError(StatsErrc::ColumnMismatch, "'" + o + "' is both outcome and predictor");

  std::map<std::string, std::size_t> cluster_index;
  std::vector<std::size_t> cluster_of(clusters.size());
  for (std::size_t i = 0; i < clusters.size(); ++i)
    cluster_of[i] = cluster_index.try_emplace(clusters[i], cluster_index.size()).first->second;
  const std::size_t g = cluster_index.size();
  if (g < 2) throw StatsError(StatsErrc::SingleCluster, "path model needs at least 2 clusters");

  NamedMatrix ys = data.select(spec.outcomes);
  NamedMatrix xs = data.select(spec.predictors);
  if (!ys.values.allFinite() || !xs.values.allFinite())
    throw StatsError(StatsErrc::NonFinite, "path model data has non-finite values");
  if (spec.standardize) {
    ys.values = standardize(ys).z;
    xs.values = standardize(xs).z;
  }
  const auto p = static_cast<Eigen::Index>(spec.predictors.size());
  const Eigen::Index k = p + 1;
  if (n <= k) throw StatsError(StatsErrc::TooFewRows, "path model needs more rows than coefficients");

  Eigen::MatrixXd x(n, k);
  x.col(0).setOnes();
  x.rightCols(p) = xs.values;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  if (qr.rank() < k) throw StatsError(StatsErrc::Singular, "design matrix is singular");
  const Eigen::MatrixXd beta = qr.solve(ys.values);
  const Eigen::MatrixXd resid = ys.values - x * beta;
  const Eigen::MatrixXd bread = (x.transpose() * x).inverse();

  const double dn = static_cast<double>(n), dk = static_cast<double>(k), dg = static_cast<double>(g);
  const double scale = dg / (dg - 1) * (dn - 1) / (dn - dk);

  PathModelFit fit;
  fit.outcomes = spec.outcomes;
  fit.predictors = spec.predictors;
  fit.n = static_cast<std::size_t>(n);
  fit.n_clusters = g;
  for (Eigen::Index o = 0; o < ys.values.cols(); ++o) {
    Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(g), k);
    for (Eigen::Index i = 0; i < n; ++i)
      scores.row(static_cast<Eigen::Index>(cluster_of[static_cast<std::size_t>(i)])) += x.row(i) * resid(i, o);
    const Eigen::MatrixXd meat = scores.transpose() * scores;
    const Eigen::MatrixXd v = scale * bread * meat * bread;
    for (Eigen::Index j = 1; j < k; ++j) {
      PathCoefficient c;
      c.outcome = spec.outcomes[static_cast<std::size_t>(o)];
      c.predictor = spec.predictors[static_cast<std::size_t>(j - 1)];
      c.estimate = beta(j, o);
      c.se = std::sqrt(std::max(v(j, j), 0.0));
      c.z = c.se > 0 ? c.estimate / c.se : std::numeric_limits<double>::quiet_NaN();
      c.p = normal_two_sided_p(c.z);
      fit.coefficients.push_back(std::move(c));
    }
  }

  const auto m = resid.cols();
  Eigen::MatrixXd centered = resid.rowwise() - resid.colwise().mean();
  fit.residual_correlation.resize(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      fit.residual_correlation(i, j) =
          i == j ? 1.0
                 : centered.col(i).dot(centered.col(j)) /
                       std::sqrt(centered.col(i).squaredNorm() * centered.col(j).squaredNorm());
  return fit;
}

PathModelFit fit_from_table(const std::vector<PathCoefficient>& entries) {
  PathModelFit fit;
  for (auto e : entries) {
    if (std::find(fit.outcomes.begin(), fit.outcomes.end(), e.outcome) == fit.outcomes.end())
      fit.outcomes.push_back(e.outcome);
    if (std::find(fit.predictors.begin(), fit.predictors.end(), e.predictor) == fit.predictors.end())
      fit.predictors.push_back(e.predictor);
    e.z = e.se > 0 ? e.estimate / e.se : std::numeric_limits<double>::quiet_NaN();
    fit.coefficients.push_back(std::move(e));
  }
  return fit;
}

std::string path_model_csv(const PathModelFit& fit) {
  std::ostringstream out;
  out << "outcome,predictor,estimate,se,z,p\n";
  for (const auto& c : fit.coefficients)
    out << csv_escape(c.outcome) << ',' << csv_escape(c.predictor) << ',' << format_fixed(c.estimate) << ','
        << format_fixed(c.se) << ',' << format_fixed(c.z) << ',' << format_fixed(c.p) << '\n';
  return out.str();
}

namespace {

std::string stars(double p) {
  if (!(p < 0.05)) return "";
  return p < 0.001 ? "***" : p < 0.01 ? "**" : "*";
}

}  // namespace

std::string path_model_text(const PathModelFit& fit) {
  std::ostringstream out;
  out << std::left << std::setw(16) << "predictor";
  for (const auto& o : fit.outcomes) out << std::setw(30) << o;
  out << '\n' << std::setw(16) << "";
  for (std::size_t i = 0; i < fit.outcomes.size(); ++i) out << std::setw(30) << "Est.    SE      p";
  out << '\n';
  for (const auto& pr : fit.predictors) {
    out << std::setw(16) << pr;
    for (const auto& o : fit.outcomes) {
      const auto* c = fit.find(o, pr);
      std::string cell = c ? format_fixed(c->estimate, 3) + "  " + format_fixed(c->se, 3) + "  " +
                                 format_fixed(c->p, 3) + stars(c->p)
                           : "NA";
      out << std::setw(30) << cell;
    }
    out << '\n';
  }
  out << "n = " << fit.n << ", clusters = " << fit.n_clusters
      << "; standardized estimates, cluster-robust (CR1) SEs; *p<.05 **p<.01 ***p<.001\n";
  return out.str();
}

std::string_view verdict_name(Verdict v) {
  switch (v) {
    case Verdict::Supported: return "supported";
    case Verdict::Partial: return "partially supported";
    case Verdict::Unsupported: return "not supported";
    case Verdict::Contradicted: return "contradicted";
  }
  return "not supported";
}

std::vector<HypothesisResult> hypothesis_report(const PathModelFit& fit, double alpha) {
  struct Def {
    const char* id;
    const char* statement;
    std::vector<std::pair<std::string_view, std::string_view>> paths;  // (predictor, outcome)
  };
  const std::vector<Def> defs{
      {"H1", "Disclosure is predicted by the preceding therapist empathy and exploration",
       {{var::empathy, var::disclosure}, {var::exploration, var::disclosure}}},
      {"H2", "Disclosure is predicted by rapport from the previous session", {{var::rapport_prev, var::disclosure}}},
      {"H3", "Therapist empathy predicts more negative emotion",
       {{var::empathy, var::self_directed}, {var::empathy, var::outward}}},
      {"H4", "Rapport from the previous session predicts more negative emotion",
       {{var::rapport_prev, var::self_directed}, {var::rapport_prev, var::outward}}},
  };

  std::vector<HypothesisResult> out;
  for (const auto& d : defs) {
    HypothesisResult h{d.id, d.statement, Verdict::Unsupported, {}};
    std::size_t pos = 0, neg = 0;
    for (const auto& [pred, outc] : d.paths) {
      const auto* c = fit.find(outc, pred);
      if (!c)
        throw StatsError(StatsErrc::MissingPath,
                         std::string(d.id) + " needs path " + std::string(pred) + " -> " + std::string(outc));
      const bool sig = c->p <= alpha;
      h.paths.push_back({c->outcome, c->predictor, c->estimate, c->p, sig});
      pos += sig && c->estimate > 0;
      neg += sig && c->estimate < 0;
    }
    if (pos == d.paths.size()) h.verdict = Verdict::Supported;
    else if (pos > 0) h.verdict = Verdict::Partial;
    else if (neg > 0) h.verdict = Verdict::Contradicted;
    out.push_back(std::move(h));
  }
  return out;
}

std::string hypotheses_text(const std::vector<HypothesisResult>& results) {
  std::ostringstream out;
  for (const auto& h : results) {
    out << h.id << ": " << verdict_name(h.verdict) << " - " << h.statement << '\n';
    for (const auto& p : h.paths)
      out << "    " << p.predictor << " -> " << p.outcome << ": beta = " << format_fixed(p.estimate, 3)
          << ", p = " << format_fixed(p.p, 3) << (p.significant ? " (significant" : " (not significant")
          << (p.significant ? (p.estimate > 0 ? ", positive)" : ", negative)") : ")") << '\n';
  }
  return out.str();
}

std::string hypotheses_json(const std::vector<HypothesisResult>& results) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& h : results) {
    nlohmann::ordered_json j;
    j["id"] = h.id;
    j["statement"] = h.statement;
    j["verdict"] = verdict_name(h.verdict);
    j["paths"] = nlohmann::ordered_json::array();
    for (const auto& p : h.paths)
      j["paths"].push_back({{"predictor", p.predictor},
                            {"outcome", p.outcome},
                            {"estimate", format_fixed(p.estimate)},
                            {"p", format_fixed(p.p)},
                            {"significant", p.significant}});
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

}  // namespace tdyn
