#include "tdyn/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tdyn/util.hpp"

namespace tdyn {

std::size_t NamedMatrix::column(std::string_view name) const {
  auto it = std::find(names.begin(), names.end(), name);
  if (it == names.end()) throw StatsError(StatsErrc::ColumnMismatch, "no column '" + std::string(name) + "'");
  return static_cast<std::size_t>(it - names.begin());
}

NamedMatrix NamedMatrix::select(const std::vector<std::string>& columns) const {
  NamedMatrix out{columns, Eigen::MatrixXd(values.rows(), static_cast<Eigen::Index>(columns.size()))};
  for (std::size_t j = 0; j < columns.size(); ++j)
    out.values.col(static_cast<Eigen::Index>(j)) = values.col(static_cast<Eigen::Index>(column(columns[j])));
  return out;
}

namespace {

void require_finite(const NamedMatrix& m) {
  if (!m.values.allFinite()) throw StatsError(StatsErrc::NonFinite, "matrix has non-finite values");
  if (static_cast<std::size_t>(m.values.cols()) != m.names.size())
    throw StatsError(StatsErrc::ColumnMismatch, "column names do not match matrix width");
}

}  // namespace

StandardizedMatrix standardize(const NamedMatrix& m) {
  require_finite(m);
  const Eigen::Index n = m.values.rows(), p = m.values.cols();
  if (n < 2) throw StatsError(StatsErrc::TooFewRows, "standardize needs at least 2 rows");
  StandardizedMatrix s{m.names, Eigen::MatrixXd(n, p), Eigen::VectorXd(p), Eigen::VectorXd(p)};
  for (Eigen::Index j = 0; j < p; ++j) {
    const auto col = m.values.col(j);
    if ((col.array() == col(0)).all())
      throw StatsError(StatsErrc::ConstantColumn, "column '" + m.names[static_cast<std::size_t>(j)] + "' is constant");
    const double mean = col.mean();
    const double sd = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(n - 1));
    s.mean(j) = mean;
    s.sd(j) = sd;
    s.z.col(j) = (col.array() - mean) / sd;
  }
  return s;
}

Eigen::MatrixXd StandardizedMatrix::apply(const Eigen::MatrixXd& raw) const {
  if (raw.cols() != mean.size()) throw StatsError(StatsErrc::ColumnMismatch, "width differs from fitted columns");
  return (raw.rowwise() - mean.transpose()).array().rowwise() / sd.transpose().array();
}

Eigen::MatrixXd StandardizedMatrix::inverse(const Eigen::MatrixXd& zscores) const {
  if (zscores.cols() != mean.size()) throw StatsError(StatsErrc::ColumnMismatch, "width differs from fitted columns");
  return (zscores.array().rowwise() * sd.transpose().array()).rowwise() + mean.transpose().array();
}

Eigen::MatrixXd correlation_matrix(const NamedMatrix& m) {
  require_finite(m);
  const Eigen::Index n = m.values.rows(), p = m.values.cols();
  if (n < 3) throw StatsError(StatsErrc::TooFewRows, "correlation needs at least 3 rows");
  Eigen::MatrixXd centered = m.values.rowwise() - m.values.colwise().mean();
  Eigen::VectorXd ss(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    if ((m.values.col(j).array() == m.values(0, j)).all())
      throw StatsError(StatsErrc::ConstantColumn, "column '" + m.names[static_cast<std::size_t>(j)] + "' is constant");
    ss(j) = centered.col(j).squaredNorm();
  }
  Eigen::MatrixXd r(p, p);
  for (Eigen::Index i = 0; i < p; ++i) {
    r(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < p; ++j) {
      const double v = std::clamp(centered.col(i).dot(centered.col(j)) / std::sqrt(ss(i) * ss(j)), -1.0, 1.0);
      r(i, j) = r(j, i) = v;
    }
  }
  return r;
}

PcaResult pca(const NamedMatrix& m, std::size_t n_components) {
  require_finite(m);
  const Eigen::Index p = m.values.cols();
  if (m.values.rows() <= p) throw StatsError(StatsErrc::TooFewRows, "PCA needs more rows than columns");
  if (n_components == 0) throw StatsError(StatsErrc::RankExceeded, "PCA needs at least one component");

  const Eigen::MatrixXd r = correlation_matrix(m);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(r);
  if (solver.info() != Eigen::Success) throw StatsError(StatsErrc::NonFinite, "eigendecomposition failed");
  const Eigen::VectorXd values = solver.eigenvalues().reverse();
  const Eigen::MatrixXd vectors = solver.eigenvectors().rowwise().reverse();

  const double tol = 1e-10 * static_cast<double>(p);
  const auto rank = static_cast<std::size_t>((values.array() > tol).count());
  if (n_components > rank)
    throw StatsError(StatsErrc::RankExceeded, "requested " + std::to_string(n_components) +
                                                  " components but the correlation matrix has rank " +
                                                  std::to_string(rank));

  const auto k = static_cast<Eigen::Index>(n_components);
  PcaResult out;
  out.variables = m.names;
  out.eigenvalues = values;
  out.loadings = vectors.leftCols(k);
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::Index arg = 0;
    out.loadings.col(c).cwiseAbs().maxCoeff(&arg);
    if (out.loadings(arg, c) < 0) out.loadings.col(c) *= -1;
  }
  out.variance_explained = values.head(k) / static_cast<double>(p);
  out.cumulative = out.variance_explained;
  for (Eigen::Index c = 1; c < k; ++c) out.cumulative(c) += out.cumulative(c - 1);
  for (Eigen::Index c = 0; c < k; ++c) out.component_names.push_back("PC" + std::to_string(c + 1));
  const auto s = standardize(m);
  out.mean = s.mean;
  out.sd = s.sd;
  return out;
}

Eigen::MatrixXd component_scores(const PcaResult& pca, const NamedMatrix& m) {
  if (m.names != pca.variables) throw StatsError(StatsErrc::ColumnMismatch, "columns differ from the PCA variables");
  const Eigen::MatrixXd z = (m.values.rowwise() - pca.mean.transpose()).array().rowwise() / pca.sd.transpose().array();
  Eigen::MatrixXd scores = z * pca.loadings;
  for (Eigen::Index c = 0; c < scores.cols(); ++c) scores.col(c) /= std::sqrt(pca.eigenvalues(c));
  return scores;
}

std::vector<CompositeMatch> match_components(const PcaResult& pca, const std::vector<CompositeSpec>& composites) {
  const std::size_t m = pca.components();
  const std::size_t g = composites.size();
  // strength[c][j]: mean signed member loading of composite c on component j
  std::vector<std::vector<double>> strength(g, std::vector<double>(m, 0.0));
  for (std::size_t c = 0; c < g; ++c) {
    for (std::size_t j = 0; j < m; ++j) {
      double sum = 0;
      for (const auto& [name, sign] : composites[c].members) {
        auto it = std::find(pca.variables.begin(), pca.variables.end(), name);
        if (it == pca.variables.end())
          throw StatsError(StatsErrc::ColumnMismatch, "composite member '" + name + "' is not a PCA variable");
        sum += sign * pca.loadings(it - pca.variables.begin(), static_cast<Eigen::Index>(j));
      }
      strength[c][j] = sum / static_cast<double>(composites[c].members.size());
    }
  }
  // Exhaustive search over injective assignments; sizes here are tiny.
  std::vector<std::size_t> perm(std::max(m, g));
  std::iota(perm.begin(), perm.end(), 0);
  double best = -1;
  std::vector<std::size_t> best_perm;
  do {
    double total = 0;
    for (std::size_t c = 0; c < g; ++c)
      if (perm[c] < m) total += std::abs(strength[c][perm[c]]);
    if (total > best + 1e-12) {
      best = total;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  std::vector<CompositeMatch> out;
  for (std::size_t c = 0; c < g; ++c) {
    const std::size_t j = best_perm[c];
    if (j >= m) continue;
    const double s = strength[c][j] < 0 ? -1.0 : 1.0;
    out.push_back({composites[c].name, j, s, s * strength[c][j]});
  }
  return out;
}

std::vector<CompositeSpec> emotion_composites() {
  return {
      {std::string(var::self_directed),
       {{"sadness", 1}, {"fear", 1}, {"anxiety", 1}, {"depression", 1}, {"enjoyment", -1}}},
      {std::string(var::outward), {{"anger", 1}, {"contempt", 1}, {"disgust", 1}}},
      {std::string(var::surprise), {{"surprise", 1}}},
  };
}

std::vector<CompositeSpec> empathy_composites() {
  return {
      {std::string(var::empathy), {{"emotional_reactions", 1}, {"interpretations", 1}, {"reflection", 1}}},
      {std::string(var::exploration), {{"explorations", 1}}},
  };
}

std::string loadings_csv(const PcaResult& pca) {
  std::ostringstream out;
  out << "variable";
  for (const auto& c : pca.component_names) out << ',' << csv_escape(c);
  out << '\n';
  for (std::size_t i = 0; i < pca.variables.size(); ++i) {
    out << csv_escape(pca.variables[i]);
    for (Eigen::Index c = 0; c < pca.loadings.cols(); ++c)
      out << ',' << format_fixed(pca.loadings(static_cast<Eigen::Index>(i), c));
    out << '\n';
  }
  out << "eigenvalue";
  for (Eigen::Index c = 0; c < pca.loadings.cols(); ++c) out << ',' << format_fixed(pca.eigenvalues(c));
  out << "\nvariance_explained";
  for (Eigen::Index c = 0; c < pca.loadings.cols(); ++c) out << ',' << format_fixed(pca.variance_explained(c));
  out << "\ncumulative";
  for (Eigen::Index c = 0; c < pca.loadings.cols(); ++c) out << ',' << format_fixed(pca.cumulative(c));
  out << '\n';
  return out.str();
}

std::string scree_csv(const PcaResult& pca) {
  std::ostringstream out;
  out << "component,eigenvalue,variance_explained,cumulative\n";
  const double p = static_cast<double>(pca.eigenvalues.size());
  double cum = 0;
  for (Eigen::Index c = 0; c < pca.eigenvalues.size(); ++c) {
    cum += pca.eigenvalues(c) / p;
    out << c + 1 << ',' << format_fixed(pca.eigenvalues(c)) << ',' << format_fixed(pca.eigenvalues(c) / p) << ','
        << format_fixed(cum) << '\n';
  }
  return out.str();
}

std::string matrix_csv(const std::vector<std::string>& names, const Eigen::MatrixXd& m) {
  std::ostringstream out;
  out << "variable";
  for (const auto& n : names) out << ',' << csv_escape(n);
  out << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out << csv_escape(names[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << format_fixed(m(i, j));
    out << '\n';
  }
  return out.str();
}

}  // namespace tdyn
