#pragma once

#include <array>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "tdyn/constructs.hpp"
#include "tdyn/types.hpp"

namespace tdyn {

struct EpitomeScore {
  MechanismRating emotional_reactions;
  MechanismRating interpretations;
  MechanismRating explorations;
  std::string explanation;
  friend bool operator==(const EpitomeScore&, const EpitomeScore&) = default;
};

enum class ReflectionLabel { Reflection, NonReflection };

struct ReflectionScore {
  ReflectionLabel label = ReflectionLabel::NonReflection;
  std::string reasoning;
  friend bool operator==(const ReflectionScore&, const ReflectionScore&) = default;
};

enum class DisclosureLabel { General = 1, Medium = 2, High = 3 };

struct DisclosureScore {
  DisclosureLabel label = DisclosureLabel::General;
  std::string reasoning;
  friend bool operator==(const DisclosureScore&, const DisclosureScore&) = default;
};

struct EmotionScore {
  std::array<EmotionRating, 9> ratings;  // k_emotion_names order
  std::string rationale;
  friend bool operator==(const EmotionScore&, const EmotionScore&) = default;
};

struct RapportScore {
  BondRating liking;
  BondRating confidence;
  BondRating appreciation;
  BondRating trust;
  BondRating overall;
  std::string rationale;
  friend bool operator==(const RapportScore&, const RapportScore&) = default;
};

using RawScore = std::variant<EpitomeScore, ReflectionScore, DisclosureScore, EmotionScore, RapportScore>;

ConstructId construct_of(const RawScore& raw);

/// One scored judgment: the per-completion parses and their aggregate.
struct ConstructScore {
  TargetId target;
  ConstructId construct = ConstructId::Emotion;
  std::vector<RawScore> raw;
  std::vector<double> aggregate;
  friend bool operator==(const ConstructScore&, const ConstructScore&) = default;
};

enum class ParseErrc { MissingField, OutOfRange, AmbiguousLabel };

class ParseError : public std::runtime_error {
 public:
  ParseError(ParseErrc code, std::string field, std::string detail = {});
  ParseErrc code() const { return code_; }
  const std::string& field() const { return field_; }

 private:
  ParseErrc code_;
  std::string field_;
};

std::string_view parse_errc_name(ParseErrc code);

/// Tolerant extraction of a construct's rating block from model output:
/// case-insensitive field names, optional brackets and list markers, first
/// match wins.
RawScore parse_response(ConstructId id, std::string_view text);

/// Canonical output layout for a score (what parse_response reads back).
std::string format_response(const RawScore& raw);

/// Aggregate dimension names, e.g. {"ER","IP","EX"} or the nine emotions.
std::vector<std::string> aggregate_dimensions(ConstructId id);

/// Completion aggregation: Likert/ordinal dimensions are averaged,
/// Reflection becomes the fraction labelled Reflection, Disclosure the mean
/// of G=1, M=2, H=3.
std::vector<double> aggregate(std::span<const RawScore> raws);

/// Majority label; a tie resolves to Reflection.
ReflectionLabel majority_reflection(std::span<const RawScore> raws);

std::string_view label_name(ReflectionLabel label);
std::string_view label_name(DisclosureLabel label);

}  // namespace tdyn
