#include "tdyn/reliability.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <random>
#include <set>
#include <sstream>

#include <boost/math/distributions/fisher_f.hpp>

#include "tdyn/util.hpp"

namespace tdyn {

namespace {
constexpr double k_nan = std::numeric_limits<double>::quiet_NaN();
}

RatingMatrix::RatingMatrix(std::size_t subjects, std::size_t raters)
    : n_(subjects), k_(raters), cells_(subjects * raters, k_nan) {}

RatingMatrix RatingMatrix::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) return RatingMatrix(0, 0);
  RatingMatrix m(rows.size(), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != m.k_)
      throw ReliabilityError(ReliabilityErrc::LengthMismatch, "rating rows differ in length");
    for (std::size_t j = 0; j < m.k_; ++j) m.set(i, j, rows[i][j]);
  }
  return m;
}

bool RatingMatrix::missing(std::size_t i, std::size_t j) const { return std::isnan((*this)(i, j)); }

bool RatingMatrix::complete() const {
  return std::none_of(cells_.begin(), cells_.end(), [](double v) { return std::isnan(v); });
}

void RatingMatrix::validate() const {
  for (std::size_t i = 0; i < n_; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < k_; ++j) any = any || !missing(i, j);
    if (!any) throw ReliabilityError(ReliabilityErrc::IncompleteMatrix, "subject " + std::to_string(i) + " has no ratings");
  }
  for (std::size_t j = 0; j < k_; ++j) {
    bool any = false;
    for (std::size_t i = 0; i < n_; ++i) any = any || !missing(i, j);
    if (!any) throw ReliabilityError(ReliabilityErrc::IncompleteMatrix, "rater " + std::to_string(j) + " has no ratings");
  }
}

IccResult icc_2k(const RatingMatrix& m) {
  const std::size_t n = m.subjects(), k = m.raters();
  if (n < 2 || k < 2)
    throw ReliabilityError(ReliabilityErrc::TooSmall, "ICC needs at least 2 subjects and 2 raters");
  if (!m.complete()) throw ReliabilityError(ReliabilityErrc::IncompleteMatrix, "ICC(2,k) needs a complete matrix");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j)
      if (!std::isfinite(m(i, j))) throw ReliabilityError(ReliabilityErrc::Undefined, "non-finite rating");

  bool constant = true, rows_agree = true;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      constant = constant && m(i, j) == m(0, 0);
      rows_agree = rows_agree && m(i, j) == m(i, 0);
    }
  if (constant) throw ReliabilityError(ReliabilityErrc::Undefined, "ratings have zero variance");

  std::vector<double> row_mean(n, 0.0), col_mean(k, 0.0);
  double grand = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      row_mean[i] += m(i, j);
      col_mean[j] += m(i, j);
      grand += m(i, j);
    }
  for (auto& v : row_mean) v /= static_cast<double>(k);
  for (auto& v : col_mean) v /= static_cast<double>(n);
  grand /= static_cast<double>(n * k);

  double ss_rows = 0, ss_cols = 0, ss_err = 0;
  for (double r : row_mean) ss_rows += (r - grand) * (r - grand);
  ss_rows *= static_cast<double>(k);
  if (!rows_agree) {
    for (double c : col_mean) ss_cols += (c - grand) * (c - grand);
    ss_cols *= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < k; ++j) {
        const double e = m(i, j) - row_mean[i] - col_mean[j] + grand;
        ss_err += e * e;
      }
  }
  const double dn = static_cast<double>(n), dk = static_cast<double>(k);
  IccResult r;
  r.n = n;
  r.k = k;
  r.ms_rows = ss_rows / (dn - 1);
  r.ms_cols = ss_cols / (dk - 1);
  r.ms_error = ss_err / ((dn - 1) * (dk - 1));
  const double msr = r.ms_rows, msc = r.ms_cols, mse = r.ms_error;
  const double denom = msr + (msc - mse) / dn;
  if (denom == 0) throw ReliabilityError(ReliabilityErrc::Undefined, "ICC denominator is zero");
  r.icc = (msr - mse) / denom;

  if (mse == 0) {
    r.ci_low = r.ci_high = r.icc;
    return r;
  }
  // McGraw & Wong (1996) interval for ICC(2,1), stepped up to k raters.
  const double icc1 = (msr - mse) / (msr + (dk - 1) * mse + dk * (msc - mse) / dn);
  const double fj = msc / mse;
  const double vn = (dk - 1) * (dn - 1) * std::pow(dk * icc1 * fj + dn * (1 + (dk - 1) * icc1) - dk * icc1, 2);
  const double vd = (dn - 1) * dk * dk * icc1 * icc1 * fj * fj + std::pow(dn * (1 + (dk - 1) * icc1) - dk * icc1, 2);
  const double v = vn / vd;
  r.ci_low = r.ci_high = k_nan;
  if (!std::isfinite(v) || v <= 0) return r;
  try {
    const double f_upper = quantile(boost::math::fisher_f_distribution<double>(dn - 1, v), 0.975);
    const double f_lower = quantile(boost::math::fisher_f_distribution<double>(v, dn - 1), 0.975);
    const double l1 = dn * (msr - f_upper * mse) / (f_upper * (dk * msc + (dk * dn - dk - dn) * mse) + dn * msr);
    const double u1 = dn * (f_lower * msr - mse) / (dk * msc + (dk * dn - dk - dn) * mse + dn * f_lower * msr);
    r.ci_low = l1 * dk / (1 + l1 * (dk - 1));
    r.ci_high = u1 * dk / (1 + u1 * (dk - 1));
  } catch (const std::exception&) {
  }
  return r;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw ReliabilityError(ReliabilityErrc::LengthMismatch, "pearson: lengths differ");
  if (x.size() < 3) throw ReliabilityError(ReliabilityErrc::TooSmall, "pearson: needs at least 3 pairs");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0 || syy == 0) throw ReliabilityError(ReliabilityErrc::Undefined, "pearson: constant input");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double f1_binary(std::span<const std::string> gold, std::span<const std::string> pred, std::string_view positive) {
  if (gold.size() != pred.size()) throw ReliabilityError(ReliabilityErrc::LengthMismatch, "f1: lengths differ");
  if (gold.empty()) throw ReliabilityError(ReliabilityErrc::TooSmall, "f1: no labels");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    const bool g = gold[i] == positive, p = pred[i] == positive;
    tp += g && p;
    fp += !g && p;
    fn += g && !p;
  }
  const double precision = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
  const double recall = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
  if (precision + recall == 0) return 0.0;
  return 2 * precision * recall / (precision + recall);
}

// ---------------------------------------------------------------------------
// Stratified sampling

namespace {

std::string stratum_of_third(double v, double lo, double hi) {
  const double width = (hi - lo) / 3;
  if (v < lo + width) return "low";
  if (v < lo + 2 * width) return "medium";
  return "high";
}

}  // namespace

StratifiedSample stratified_sample(const ScoreStore& store, ConstructId construct, std::size_t per_stratum,
                                   std::uint64_t seed, bool allow_partial) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<TargetId>> candidates;

  switch (construct) {
    case ConstructId::EmpathyReflection: order = {"Reflection", "Non-Reflection"}; break;
    case ConstructId::SelfDisclosure: order = {"G", "M", "H"}; break;
    case ConstructId::EmpathyEpitome:
    case ConstructId::Rapport: order = {"low", "medium", "high"}; break;
    case ConstructId::Emotion:
      for (auto name : k_emotion_names) order.emplace_back(name);
      break;
  }
  for (const auto& s : order) candidates[s];

  for (const auto& rec : store.records()) {
    if (!rec.ok() || rec.score.construct != construct) continue;
    const auto& agg = rec.score.aggregate;
    switch (construct) {
      case ConstructId::EmpathyReflection:
        candidates[agg.at(0) >= 0.5 ? "Reflection" : "Non-Reflection"].push_back(rec.score.target);
        break;
      case ConstructId::SelfDisclosure: {
        const long label = std::clamp(std::lround(agg.at(0)), 1L, 3L);
        candidates[label == 1 ? "G" : label == 2 ? "M" : "H"].push_back(rec.score.target);
        break;
      }
      case ConstructId::EmpathyEpitome:
        candidates[stratum_of_third(agg.at(0) + agg.at(1) + agg.at(2), 0, 6)].push_back(rec.score.target);
        break;
      case ConstructId::Rapport:
        candidates[stratum_of_third(agg.at(4), 1, 7)].push_back(rec.score.target);
        break;
      case ConstructId::Emotion:
        for (std::size_t e = 0; e < k_emotion_names.size(); ++e)
          if (agg.at(e) >= 4) candidates[std::string(k_emotion_names[e])].push_back(rec.score.target);
        break;
    }
  }

  StratifiedSample out;
  std::mt19937_64 rng(seed);
  std::set<TargetId> taken;
  std::vector<std::string> short_strata;
  for (const auto& name : order) {
    auto pool = candidates[name];
    std::erase_if(pool, [&](const TargetId& t) { return taken.count(t) > 0; });
    deterministic_shuffle(pool, rng);
    const std::size_t take = std::min(per_stratum, pool.size());
    std::vector<TargetId> chosen(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(take));
    std::sort(chosen.begin(), chosen.end());
    for (const auto& t : chosen) {
      taken.insert(t);
      out.targets.push_back(t);
    }
    out.strata[name] = {pool.size(), take};
    if (take < per_stratum) short_strata.push_back(name + " (" + std::to_string(pool.size()) + " available)");
  }
  if (!short_strata.empty() && !allow_partial) {
    std::string msg = std::string(construct_name(construct)) + ": cannot draw " + std::to_string(per_stratum) +
                      " per stratum; underpopulated: ";
    for (std::size_t i = 0; i < short_strata.size(); ++i) msg += (i ? ", " : "") + short_strata[i];
    throw ReliabilityError(ReliabilityErrc::Underpopulated, msg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Annotation files

namespace {

std::string canonical_dimension(ConstructId id, std::string_view name) {
  const std::string lowered = to_lower(trim(name));
  for (const auto& d : aggregate_dimensions(id))
    if (to_lower(d) == lowered) return d;
  throw ReliabilityError(ReliabilityErrc::BadAnnotation,
                         "unknown dimension '" + std::string(name) + "' for " + std::string(construct_name(id)));
}

std::pair<double, double> dimension_range(ConstructId id) {
  switch (id) {
    case ConstructId::EmpathyEpitome: return {0, 2};
    case ConstructId::EmpathyReflection: return {0, 1};
    case ConstructId::SelfDisclosure: return {1, 3};
    case ConstructId::Emotion: return {1, 5};
    case ConstructId::Rapport: return {1, 7};
  }
  return {0, 0};
}

double annotation_value(ConstructId id, std::string_view raw) {
  const std::string v = to_lower(trim(raw));
  if (id == ConstructId::EmpathyReflection) {
    if (v == "reflection") return 1;
    if (v == "non-reflection" || v == "nonreflection") return 0;
  }
  if (id == ConstructId::SelfDisclosure) {
    if (v == "g" || v == "general") return 1;
    if (v == "m" || v == "medium") return 2;
    if (v == "h" || v == "high") return 3;
  }
  std::size_t used = 0;
  double d = 0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != v.size() || !std::isfinite(d))
    throw ReliabilityError(ReliabilityErrc::BadAnnotation, "bad value '" + std::string(raw) + "'");
  const auto [lo, hi] = dimension_range(id);
  if (d < lo || d > hi)
    throw ReliabilityError(ReliabilityErrc::BadAnnotation,
                           "value " + std::string(raw) + " outside " + format_fixed(lo, 0) + ".." + format_fixed(hi, 0));
  return d;
}

}  // namespace

std::vector<Annotation> parse_annotations(std::istream& in) {
  std::vector<Annotation> out;
  std::set<std::tuple<ConstructId, TargetId, std::string, std::string>> seen;
  std::string line;
  std::size_t line_no = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = csv_split(line);
    auto fail = [&](const std::string& what) {
      throw ReliabilityError(ReliabilityErrc::BadAnnotation, "annotations line " + std::to_string(line_no) + ": " + what);
    };
    if (!header) {
      const std::vector<std::string> expected{"construct", "target_id", "rater_id", "dimension", "value"};
      std::vector<std::string> got;
      for (const auto& f : fields) got.push_back(to_lower(trim(f)));
      if (got != expected) fail("header must be construct,target_id,rater_id,dimension,value");
      header = true;
      continue;
    }
    if (fields.size() != 5) fail("expected 5 fields, got " + std::to_string(fields.size()));
    try {
      Annotation a;
      auto id = construct_from_name(trim(fields[0]));
      if (!id) fail("unknown construct '" + fields[0] + "'");
      a.construct = *id;
      a.target = TargetId::parse(trim(fields[1]));
      const TargetKind expected_kind = construct_info(a.construct).level == TargetLevel::Segment ? TargetKind::Segment
                                                                                                 : TargetKind::Utterance;
      if (a.target.kind != expected_kind) fail("target kind does not match construct");
      a.rater = std::string(trim(fields[2]));
      if (a.rater.empty()) fail("empty rater_id");
      a.dimension = canonical_dimension(a.construct, fields[3]);
      a.value = annotation_value(a.construct, fields[4]);
      if (!seen.insert({a.construct, a.target, a.rater, a.dimension}).second) fail("duplicate rating");
      out.push_back(std::move(a));
    } catch (const ReliabilityError& e) {
      if (std::string_view(e.what()).starts_with("annotations line")) throw;
      fail(e.what());
    } catch (const std::invalid_argument& e) {
      fail(e.what());
    }
  }
  if (!header) throw ReliabilityError(ReliabilityErrc::BadAnnotation, "annotations file is empty");
  return out;
}

std::vector<Annotation> parse_annotations(std::string_view text) {
  std::istringstream in{std::string(text)};
  return parse_annotations(in);
}

std::string annotations_csv(const std::vector<Annotation>& annotations) {
  std::string out = "construct,target_id,rater_id,dimension,value\n";
  for (const auto& a : annotations) {
    out += std::string(construct_name(a.construct)) + ',' + csv_escape(a.target.str()) + ',' + csv_escape(a.rater) +
           ',' + csv_escape(a.dimension) + ',';
    if (a.construct == ConstructId::EmpathyReflection)
      out += a.value >= 0.5 ? "Reflection" : "Non-Reflection";
    else if (a.construct == ConstructId::SelfDisclosure)
      out += a.value < 1.5 ? "G" : a.value < 2.5 ? "M" : "H";
    else
      out += format_fixed(a.value, 0);
    out += '\n';
  }
  return out;
}

std::vector<Annotation> simulate_annotations(const ScoreStore& store, std::size_t raters, std::size_t per_stratum,
                                             std::uint64_t seed) {
  std::vector<Annotation> out;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (std::size_t c = 0; c < store.meta().constructs.size(); ++c) {
    const ConstructId id = store.meta().constructs[c];
    const auto sample = stratified_sample(store, id, per_stratum, seed + c + 1, true);
    const auto dims = aggregate_dimensions(id);
    const auto [lo, hi] = dimension_range(id);
    const double sd = id == ConstructId::Rapport ? 0.7 : id == ConstructId::Emotion ? 0.6 : 0.4;
    for (const auto& target : sample.targets) {
      const auto* agg = store.aggregate(id, target);
      for (std::size_t r = 0; r < raters; ++r) {
        for (std::size_t d = 0; d < dims.size(); ++d) {
          double v;
          if (id == ConstructId::EmpathyReflection) {
            const bool label = agg->at(d) >= 0.5;
            v = (uniform01(rng) < 0.1) != label ? 1.0 : 0.0;
          } else {
            v = std::clamp(std::round(agg->at(d) + sd * noise(rng)), lo, hi);
          }
          out.push_back({id, target, "r" + std::to_string(r + 1), dims[d], v});
        }
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report

ReliabilityReport reliability_report(const ScoreStore& store, const std::vector<Annotation>& annotations) {
  // (construct, dimension) -> target -> rater -> value
  std::map<std::pair<ConstructId, std::string>, std::map<TargetId, std::map<std::string, double>>> grid;
  for (const auto& a : annotations) grid[{a.construct, a.dimension}][a.target][a.rater] = a.value;

  ReliabilityReport report;
  for (auto id : k_all_constructs) {
    const auto dims = aggregate_dimensions(id);
    for (std::size_t d = 0; d < dims.size(); ++d) {
      auto it = grid.find({id, dims[d]});
      if (it == grid.end()) continue;
      DimensionReliability row;
      row.construct = id;
      row.dimension = dims[d];
      std::set<std::string> rater_set;
      for (const auto& [t, by_rater] : it->second)
        for (const auto& [r, v] : by_rater) rater_set.insert(r);
      const std::vector<std::string> raters(rater_set.begin(), rater_set.end());

      std::vector<std::vector<double>> human, with_llm;
      std::vector<double> llm, human_mean;
      std::vector<std::string> gold, pred;
      std::size_t incomplete = 0, unscored = 0;
      for (const auto& [t, by_rater] : it->second) {
        if (by_rater.size() != raters.size()) {
          ++incomplete;
          continue;
        }
        const auto* agg = store.aggregate(id, t);
        if (!agg) {
          ++unscored;
          continue;
        }
        std::vector<double> values;
        for (const auto& r : raters) values.push_back(by_rater.at(r));
        double mean = 0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        human.push_back(values);
        values.push_back(agg->at(d));
        with_llm.push_back(std::move(values));
        llm.push_back(agg->at(d));
        human_mean.push_back(mean);
        gold.emplace_back(mean >= 0.5 ? "Reflection" : "Non-Reflection");
        pred.emplace_back(agg->at(d) >= 0.5 ? "Reflection" : "Non-Reflection");
      }
      row.targets = human.size();
      row.raters = raters.size();
      if (incomplete) row.notes.push_back(std::to_string(incomplete) + " targets dropped: not rated by every rater");
      if (unscored) row.notes.push_back(std::to_string(unscored) + " targets dropped: no parsed model score");

      auto attempt = [&](const char* what, auto&& fn) {
        try {
          fn();
        } catch (const ReliabilityError& e) {
          row.notes.push_back(std::string(what) + ": " + e.what());
        }
      };
      attempt("human-human ICC", [&] { row.human_human = icc_2k(RatingMatrix::from_rows(human)); });
      attempt("LLM-human ICC", [&] { row.llm_human = icc_2k(RatingMatrix::from_rows(with_llm)); });
      attempt("pearson", [&] { row.pearson_r = pearson(llm, human_mean); });
      if (id == ConstructId::EmpathyReflection)
        attempt("F1", [&] { row.f1 = f1_binary(gold, pred, "Reflection"); });
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

namespace {

std::string icc_cell(const std::optional<IccResult>& r, int prec) {
  if (!r) return "NA";
  return format_fixed(r->icc, prec) + " [" + format_fixed(r->ci_low, prec) + ", " + format_fixed(r->ci_high, prec) + "]";
}

std::string opt_cell(const std::optional<double>& v, int prec) { return v ? format_fixed(*v, prec) : "NA"; }

}  // namespace

std::string report_text(const ReliabilityReport& report) {
  std::ostringstream out;
  out << std::left << std::setw(17) << "construct" << std::setw(22) << "dimension" << std::setw(6) << "n"
      << std::setw(4) << "k" << std::setw(24) << "human-human ICC(2,k)" << std::setw(24) << "LLM-human ICC(2,k)"
      << std::setw(8) << "r" << "F1\n";
  for (const auto& r : report.rows) {
    out << std::setw(17) << construct_name(r.construct) << std::setw(22) << r.dimension << std::setw(6) << r.targets
        << std::setw(4) << r.raters << std::setw(24) << icc_cell(r.human_human, 2) << std::setw(24)
        << icc_cell(r.llm_human, 2) << std::setw(8) << opt_cell(r.pearson_r, 2) << opt_cell(r.f1, 2) << '\n';
    for (const auto& n : r.notes) out << "    note: " << n << '\n';
  }
  return out.str();
}

std::string report_csv(const ReliabilityReport& report) {
  std::ostringstream out;
  out << "construct,dimension,targets,raters,hh_icc,hh_ci_low,hh_ci_high,llm_icc,llm_ci_low,llm_ci_high,pearson_r,f1\n";
  auto icc = [](const std::optional<IccResult>& r) {
    if (!r) return std::string("NA,NA,NA");
    return format_fixed(r->icc) + ',' + format_fixed(r->ci_low) + ',' + format_fixed(r->ci_high);
  };
  for (const auto& r : report.rows)
    out << construct_name(r.construct) << ',' << csv_escape(r.dimension) << ',' << r.targets << ',' << r.raters << ','
        << icc(r.human_human) << ',' << icc(r.llm_human) << ',' << opt_cell(r.pearson_r, 6) << ','
        << opt_cell(r.f1, 6) << '\n';
  return out.str();
}

}  // namespace tdyn
