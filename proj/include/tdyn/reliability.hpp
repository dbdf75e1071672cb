#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tdyn/pipeline.hpp"

namespace tdyn {

enum class ReliabilityErrc { Undefined, IncompleteMatrix, TooSmall, LengthMismatch, Underpopulated, BadAnnotation };

class ReliabilityError : public std::runtime_error {
 public:
  ReliabilityError(ReliabilityErrc code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}
  ReliabilityErrc code() const { return code_; }

 private:
  ReliabilityErrc code_;
};

/// Subjects x raters grid. NaN marks a missing cell.
class RatingMatrix {
 public:
  RatingMatrix(std::size_t subjects, std::size_t raters);
  static RatingMatrix from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t subjects() const { return n_; }
  std::size_t raters() const { return k_; }
  double operator()(std::size_t i, std::size_t j) const { return cells_[i * k_ + j]; }
  void set(std::size_t i, std::size_t j, double v) { cells_[i * k_ + j] = v; }
  bool missing(std::size_t i, std::size_t j) const;
  bool complete() const;
  /// Throws IncompleteMatrix if a whole row or column is missing.
  void validate() const;

 private:
  std::size_t n_, k_;
  std::vector<double> cells_;
};

struct IccResult {
  double icc = 0;
  double ci_low = 0;
  double ci_high = 0;
  std::size_t n = 0;
  std::size_t k = 0;
  double ms_rows = 0;
  double ms_cols = 0;
  double ms_error = 0;
};

/// ICC(2,k): two-way random effects, absolute agreement, mean of k raters,
/// with the F-based 95% interval.
IccResult icc_2k(const RatingMatrix& m);

/// Sample Pearson correlation; throws TooSmall, LengthMismatch, Undefined.
double pearson(std::span<const double> x, std::span<const double> y);

/// F1 of `positive`; 0 when precision + recall = 0.
double f1_binary(std::span<const std::string> gold, std::span<const std::string> pred, std::string_view positive);

struct StratifiedSample {
  std::vector<TargetId> targets;
  /// stratum name -> (available, selected)
  std::map<std::string, std::pair<std::size_t, std::size_t>> strata;
};

/// Strata: label (Reflection, Self-Disclosure), low/medium/high thirds of
/// the scale (EPITOME total 0-6, Rapport overall 1-7), or per-emotion high
/// intensity (mean >= 4). Throws Underpopulated unless allow_partial.
StratifiedSample stratified_sample(const ScoreStore& store, ConstructId construct, std::size_t per_stratum,
                                   std::uint64_t seed, bool allow_partial = false);

/// One cell of a human annotation file.
struct Annotation {
  ConstructId construct = ConstructId::Emotion;
  TargetId target;
  std::string rater;
  std::string dimension;  // canonical aggregate_dimensions() name
  double value = 0;
};

/// CSV with header `construct,target_id,rater_id,dimension,value`.
/// Reflection values may be Reflection/Non-Reflection (1/0), Self-Disclosure
/// values G/M/H (1/2/3).
std::vector<Annotation> parse_annotations(std::istream& in);
std::vector<Annotation> parse_annotations(std::string_view text);
std::string annotations_csv(const std::vector<Annotation>& annotations);

/// Noisy simulated raters around the model's scores, over a partial
/// stratified sample of every construct in the store.
std::vector<Annotation> simulate_annotations(const ScoreStore& store, std::size_t raters, std::size_t per_stratum,
                                             std::uint64_t seed);

struct DimensionReliability {
  ConstructId construct = ConstructId::Emotion;
  std::string dimension;
  std::size_t targets = 0;
  std::size_t raters = 0;
  std::optional<IccResult> human_human;
  std::optional<IccResult> llm_human;
  std::optional<double> pearson_r;
  std::optional<double> f1;
  std::vector<std::string> notes;
};

struct ReliabilityReport {
  std::vector<DimensionReliability> rows;
};

/// Human-human ICC over the human columns; LLM-human ICC with the model
/// aggregate as one extra column; Pearson of model vs human mean; F1 of
/// majority labels for Reflection. Targets lacking any rater are dropped.
ReliabilityReport reliability_report(const ScoreStore& store, const std::vector<Annotation>& annotations);

std::string report_text(const ReliabilityReport& report);
std::string report_csv(const ReliabilityReport& report);

}  // namespace tdyn
