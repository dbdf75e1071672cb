#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace tdyn {

enum class StatsErrc { ConstantColumn, NonFinite, TooFewRows, RankExceeded, ColumnMismatch, Singular, SingleCluster, MissingPath };

class StatsError : public std::runtime_error {
 public:
  StatsError(StatsErrc code, std::string message) : std::runtime_error(std::move(message)), code_(code) {}
  StatsErrc code() const { return code_; }

 private:
  StatsErrc code_;
};

/// Rows are analysis units, columns named variables.
struct NamedMatrix {
  std::vector<std::string> names;
  Eigen::MatrixXd values;

  std::size_t column(std::string_view name) const;  // throws ColumnMismatch
  NamedMatrix select(const std::vector<std::string>& columns) const;
};

struct StandardizedMatrix {
  std::vector<std::string> names;
  Eigen::MatrixXd z;
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;  // sample sd

  /// z-scores `raw` (same columns) with the retained parameters.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& raw) const;
  Eigen::MatrixXd inverse(const Eigen::MatrixXd& zscores) const;
};

StandardizedMatrix standardize(const NamedMatrix& m);

/// Pairwise Pearson; unit diagonal.
Eigen::MatrixXd correlation_matrix(const NamedMatrix& m);

struct PcaResult {
  std::vector<std::string> variables;
  Eigen::MatrixXd loadings;           // variables x retained components, unit columns
  Eigen::VectorXd eigenvalues;        // all, nonincreasing
  Eigen::VectorXd variance_explained; // retained
  Eigen::VectorXd cumulative;         // retained
  std::vector<std::string> component_names;
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;

  std::size_t components() const { return static_cast<std::size_t>(loadings.cols()); }
};

/// Unrotated PCA of the correlation matrix. Each component's
/// largest-|loading| variable is positive.
PcaResult pca(const NamedMatrix& m, std::size_t n_components);

/// Unit-variance scores: z-scored rows projected on each loading vector,
/// divided by sqrt(eigenvalue).
Eigen::MatrixXd component_scores(const PcaResult& pca, const NamedMatrix& m);

/// A named composite: member variables with their expected sign.
struct CompositeSpec {
  std::string name;
  std::vector<std::pair<std::string, double>> members;
};

struct CompositeMatch {
  std::string name;
  std::size_t component = 0;
  double sign = 1;   // multiply the component by this to orient the composite
  double strength = 0;  // mean signed member loading after orientation
};

/// Assigns composites to distinct components maximising total |strength|.
/// Composites beyond the component count stay unmatched.
std::vector<CompositeMatch> match_components(const PcaResult& pca, const std::vector<CompositeSpec>& composites);

std::vector<CompositeSpec> emotion_composites();
std::vector<CompositeSpec> empathy_composites();

std::string loadings_csv(const PcaResult& pca);
std::string scree_csv(const PcaResult& pca);
std::string matrix_csv(const std::vector<std::string>& names, const Eigen::MatrixXd& m);

// ---------------------------------------------------------------------------
// Path model

namespace var {
inline constexpr std::string_view self_directed = "self_directed";
inline constexpr std::string_view outward = "outward";
inline constexpr std::string_view surprise = "surprise";
inline constexpr std::string_view disclosure = "disclosure";
inline constexpr std::string_view log_session = "log_session";
inline constexpr std::string_view rapport_prev = "rapport_prev";
inline constexpr std::string_view exploration = "exploration";
inline constexpr std::string_view empathy = "empathy";
}  // namespace var

struct PathModelSpec {
  std::vector<std::string> outcomes{std::string(var::self_directed), std::string(var::outward),
                                    std::string(var::surprise), std::string(var::disclosure)};
  std::vector<std::string> predictors{std::string(var::log_session), std::string(var::rapport_prev),
                                      std::string(var::exploration), std::string(var::empathy)};
  /// z-score every variable before fitting.
  bool standardize = true;
};

struct PathCoefficient {
  std::string outcome;
  std::string predictor;
  double estimate = 0;
  double se = 0;
  double z = 0;
  double p = 1;
};

struct PathModelFit {
  std::vector<std::string> outcomes;
  std::vector<std::string> predictors;
  std::vector<PathCoefficient> coefficients;  // outcome-major, predictor order
  Eigen::MatrixXd residual_correlation;
  std::size_t n = 0;
  std::size_t n_clusters = 0;

  /// nullptr when absent.
  const PathCoefficient* find(std::string_view outcome, std::string_view predictor) const;
};

/// Per-outcome OLS with intercept (the saturated path model), CR1
/// cluster-robust SEs, two-sided normal p-values.
PathModelFit fit_path_model(const NamedMatrix& data, const std::vector<std::string>& clusters,
                            const PathModelSpec& spec = {});

/// Fit assembled from published estimates; z = est/se (NaN if se = 0).
PathModelFit fit_from_table(const std::vector<PathCoefficient>& entries);

std::string path_model_csv(const PathModelFit& fit);
/// Predictor rows x outcome column blocks of Est., SE, p.
std::string path_model_text(const PathModelFit& fit);

double normal_two_sided_p(double z);

enum class Verdict { Supported, Partial, Unsupported, Contradicted };
std::string_view verdict_name(Verdict v);

struct PathEvidence {
  std::string outcome;
  std::string predictor;
  double estimate = 0;
  double p = 1;
  bool significant = false;
};

struct HypothesisResult {
  std::string id;
  std::string statement;
  Verdict verdict = Verdict::Unsupported;
  std::vector<PathEvidence> paths;
};

/// H1 empathy, exploration -> disclosure; H2 rapport -> disclosure;
/// H3 empathy -> self-directed, outward; H4 rapport -> self-directed,
/// outward. Significant means p <= alpha. Throws MissingPath.
std::vector<HypothesisResult> hypothesis_report(const PathModelFit& fit, double alpha = 0.05);

std::string hypotheses_text(const std::vector<HypothesisResult>& results);
std::string hypotheses_json(const std::vector<HypothesisResult>& results);

}  // namespace tdyn
