#pragma once

#include <array>
#include <compare>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tdyn {

enum class Speaker { Client, Therapist };

/// 'C' / 'T', the transcript and prompt-log speaker tags.
char speaker_tag(Speaker s);
std::optional<Speaker> speaker_from_tag(std::string_view tag);

enum class ConstructId { EmpathyEpitome, EmpathyReflection, SelfDisclosure, Emotion, Rapport };

inline constexpr std::array<ConstructId, 5> k_all_constructs = {
    ConstructId::EmpathyEpitome, ConstructId::EmpathyReflection, ConstructId::SelfDisclosure,
    ConstructId::Emotion, ConstructId::Rapport};

/// Stable machine name: "epitome", "reflection", "self_disclosure", "emotion", "rapport".
std::string_view construct_name(ConstructId id);
std::optional<ConstructId> construct_from_name(std::string_view name);

enum class TargetKind { Utterance, Segment };

/// Identifies a scored unit: one utterance or one 10% segment of a session.
/// Textual form is "<session_id>:u<index>" or "<session_id>:s<segment>".
struct TargetId {
  std::string session_id;
  TargetKind kind = TargetKind::Utterance;
  std::size_t index = 0;

  std::string str() const;
  static TargetId parse(std::string_view text);

  friend auto operator<=>(const TargetId&, const TargetId&) = default;
  friend bool operator==(const TargetId&, const TargetId&) = default;
};

/// Emotion dimension order used in every vector, table, and prompt.
inline constexpr std::array<std::string_view, 9> k_emotion_names = {
    "Anger", "Contempt", "Disgust", "Enjoyment", "Fear",
    "Sadness", "Surprise", "Anxiety", "Depression"};

inline constexpr std::array<std::string_view, 5> k_rapport_fields = {
    "Liking", "Confidence", "Appreciation", "Trust", "Overall"};

inline constexpr std::array<std::string_view, 3> k_epitome_fields = {
    "Emotional Reactions", "Interpretations", "Explorations"};

}  // namespace tdyn
