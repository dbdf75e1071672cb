#pragma once

#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tdyn/corpus.hpp"
#include "tdyn/types.hpp"

namespace tdyn {

enum class ScaleKind {
  Ordinal3x3,  // three EPITOME mechanisms, each 0..2
  Binary,      // Reflection / Non-Reflection
  OrdinalGMH,  // General / Medium / High disclosure
  Likert5x9,   // nine emotions, each 1..5
  Likert7x5,   // four bond aspects + overall, each 1..7
};

struct RatingScale {
  ScaleKind kind;
  int min;
  int max;
  std::size_t dimensions;
};

class ScaleError : public std::out_of_range {
 public:
  ScaleError(std::string field, int value)
      : std::out_of_range("'" + field + "' = " + std::to_string(value) + " is outside its scale"),
        field_(std::move(field)),
        value_(value) {}
  const std::string& field() const { return field_; }
  int value() const { return value_; }

 private:
  std::string field_;
  int value_;
};

/// An integer rating that cannot hold a value outside [Lo, Hi].
template <int Lo, int Hi>
class Rating {
 public:
  static constexpr int min = Lo;
  static constexpr int max = Hi;

  constexpr Rating() = default;
  Rating(int v, std::string_view field = "rating") : value_(v) {
    if (v < Lo || v > Hi) throw ScaleError(std::string(field), v);
  }
  constexpr int value() const { return value_; }
  constexpr operator int() const { return value_; }
  friend constexpr bool operator==(Rating, Rating) = default;

 private:
  int value_ = Lo;
};

using MechanismRating = Rating<0, 2>;
using EmotionRating = Rating<1, 5>;
using BondRating = Rating<1, 7>;

enum class TargetLevel { Utterance, Segment };

struct ContextRule {
  enum class Kind { PriorClientUtterances, PriorUtterances, WholeSegment };
  Kind kind;
  std::size_t count;  // ignored for WholeSegment
};

struct ConstructInfo {
  ConstructId id;
  RatingScale scale;
  TargetLevel level;
  ContextRule context;
  /// Speaker of the scored utterance; empty for segment-level constructs.
  std::optional<Speaker> target_speaker;
};

/// All five constructs in declaration order. Rapport is the only segment-level entry.
const std::vector<ConstructInfo>& registry();
const ConstructInfo& construct_info(ConstructId id);

struct PromptTemplate {
  std::string_view system_message;
  std::string_view user_template;
  std::string_view system_sha256;
  std::string_view user_sha256;
  std::vector<std::string_view> placeholders;  // in order of appearance
};

const PromptTemplate& prompt_template(ConstructId id);

/// File name -> SHA-256 for every embedded template asset, in the
/// "<name>.system.txt" / "<name>.user.txt" naming of the asset directory.
std::map<std::string, std::string> template_checksums();

/// Compares embedded templates against a `sha256sum`-style manifest.
/// Returns the names that are missing or differ; empty means verified.
std::vector<std::string> verify_template_manifest(std::string_view manifest_text);

enum class PromptErrc { MissingDatum, WrongWindowShape };

class PromptError : public std::runtime_error {
 public:
  PromptError(PromptErrc code, std::string message)
      : std::runtime_error(std::move(message)), code_(code) {}
  PromptErrc code() const { return code_; }

 private:
  PromptErrc code_;
};

struct RenderedPrompt {
  std::string system_message;
  std::string user_message;
  friend bool operator==(const RenderedPrompt&, const RenderedPrompt&) = default;
};

struct RenderOptions {
  /// Empathy prompts: put the earlier of the two prior client turns ahead of
  /// the most recent one inside {client_speech}. Off = most recent only.
  bool include_auxiliary_client = true;
};

/// "C: ..." / "T: ..." lines joined by '\n', no trailing newline.
std::string serialize_log(std::span<const Utterance> utterances);

/// Renders the construct's template from a context window. `summary` feeds
/// the Self-Disclosure session background and is required (possibly empty)
/// for that construct only.
RenderedPrompt render_prompt(ConstructId id, const ContextWindow& window,
                             std::optional<std::string_view> summary = std::nullopt,
                             const RenderOptions& options = {});

/// Replaces each `{name}` in `templ` using `values`, in one pass.
/// Throws PromptError if a placeholder has no value or a value is unused.
std::string substitute(std::string_view templ, const std::map<std::string, std::string>& values);

namespace detail {
struct EmbeddedTemplate {
  const char* name;
  std::string_view system;
  std::string_view user;
  const char* system_sha256;
  const char* user_sha256;
};
extern const EmbeddedTemplate k_embedded_templates[5];
}  // namespace detail

}  // namespace tdyn
