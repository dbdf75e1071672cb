#include "tdyn/parser.hpp"

#include <cctype>
#include <optional>
#include <set>

#include "tdyn/util.hpp"

namespace tdyn {

ParseError::ParseError(ParseErrc code, std::string field, std::string detail)
    : std::runtime_error(std::string(parse_errc_name(code)) + "(" + field + ")" +
                         (detail.empty() ? "" : ": " + detail)),
      code_(code),
      field_(std::move(field)) {}

std::string_view parse_errc_name(ParseErrc code) {
  switch (code) {
    case ParseErrc::MissingField: return "MissingField";
    case ParseErrc::OutOfRange: return "OutOfRange";
    case ParseErrc::AmbiguousLabel: return "AmbiguousLabel";
  }
  return "ParseError";
}

ConstructId construct_of(const RawScore& raw) {
  return static_cast<ConstructId>(raw.index());
}

std::string_view label_name(ReflectionLabel label) {
  return label == ReflectionLabel::Reflection ? "Reflection" : "Non-Reflection";
}

std::string_view label_name(DisclosureLabel label) {
  switch (label) {
    case DisclosureLabel::General: return "G";
    case DisclosureLabel::Medium: return "M";
    case DisclosureLabel::High: return "H";
  }
  return "?";
}

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

/// Strips markdown emphasis, bullets, and a leading list index.
std::string normalize_line(std::string_view raw) {
  std::string s;
  s.reserve(raw.size());
  for (char c : raw)
    if (c != '*' && c != '#' && c != '`') s.push_back(c);
  std::string_view v = trim(s);
  for (;;) {
    if (!v.empty() && (v.front() == '-' || v.front() == '>' || v.front() == '+')) {
      v = trim(v.substr(1));
    } else if (v.substr(0, 3) == "\xe2\x80\xa2") {  // bullet
      v = trim(v.substr(3));
    } else {
      break;
    }
  }
  std::size_t i = 0;
  while (i < v.size() && is_digit(v[i])) ++i;
  if (i > 0 && i < v.size() && (v[i] == '.' || v[i] == ')') &&
      (i + 1 == v.size() || v[i + 1] == ' '))
    v = trim(v.substr(i + 1));
  return std::string(v);
}

std::vector<std::string> normalized_lines(std::string_view text) {
  std::vector<std::string> out;
  for (auto line : split_lines(text)) out.push_back(normalize_line(line));
  return out;
}

/// Case-insensitive prefix match ending at a word boundary.
bool starts_with_word(std::string_view line, std::string_view word) {
  if (line.size() < word.size()) return false;
  for (std::size_t i = 0; i < word.size(); ++i)
    if (std::tolower(static_cast<unsigned char>(line[i])) !=
        std::tolower(static_cast<unsigned char>(word[i])))
      return false;
  return line.size() == word.size() || !std::isalpha(static_cast<unsigned char>(line[word.size()]));
}

struct NumberToken {
  std::string text;
  std::size_t end = 0;
};

std::optional<NumberToken> number_at_or_after(std::string_view s, std::size_t from) {
  for (std::size_t i = from; i < s.size(); ++i) {
    if (!is_digit(s[i])) continue;
    std::size_t b = i;
    if (b > 0 && s[b - 1] == '-' && (b < 2 || !is_digit(s[b - 2]))) --b;
    std::size_t e = i;
    while (e < s.size() && is_digit(s[e])) ++e;
    if (e + 1 < s.size() && s[e] == '.' && is_digit(s[e + 1])) {
      ++e;
      while (e < s.size() && is_digit(s[e])) ++e;
    }
    return NumberToken{std::string(s.substr(b, e - b)), e};
  }
  return std::nullopt;
}

struct RatingMatch {
  std::string value;
  bool echoed_placeholder = false;  // "[0/1/2]" copied from the prompt
};

std::optional<RatingMatch> rating_in(std::string_view rest, int scale_max) {
  auto finish = [&](const NumberToken& tok) {
    RatingMatch m{tok.text};
    std::size_t j = tok.end;
    while (j < rest.size() && rest[j] == ' ') ++j;
    if (j < rest.size() && rest[j] == '/') {
      auto next = number_at_or_after(rest, j + 1);
      if (next) {
        std::size_t k = next->end;
        while (k < rest.size() && rest[k] == ' ') ++k;
        if (k < rest.size() && rest[k] == '/') m.echoed_placeholder = true;
      }
    }
    return m;
  };

  if (auto colon = rest.find(':'); colon != std::string_view::npos) {
    if (auto tok = number_at_or_after(rest, colon + 1)) return finish(*tok);
  }
  const std::string denom = std::to_string(scale_max);
  std::size_t from = 0;
  while (auto tok = number_at_or_after(rest, from)) {
    from = tok->end;
    std::size_t j = tok->end;
    while (j < rest.size() && rest[j] == ' ') ++j;
    if (j < rest.size() && rest[j] == '/') {
      ++j;
      while (j < rest.size() && rest[j] == ' ') ++j;
      if (rest.substr(j, denom.size()) == denom &&
          (j + denom.size() == rest.size() || !is_digit(rest[j + denom.size()])))
        return finish(*tok);
    }
  }
  const std::string lower = to_lower(rest);
  if (auto r = lower.find("rating"); r != std::string::npos) {
    if (auto tok = number_at_or_after(rest, r + 6)) return finish(*tok);
  }
  std::size_t j = 0;
  while (j < rest.size() && (rest[j] == ' ' || std::isalpha(static_cast<unsigned char>(rest[j])))) ++j;
  if (j < rest.size() && rest[j] == '(') {
    auto close = rest.find(')', j);
    if (close != std::string_view::npos) j = close + 1;
    while (j < rest.size() && rest[j] == ' ') ++j;
  }
  if (j < rest.size() && (rest[j] == '-' || rest[j] == '=')) {
    std::size_t k = j + 1;
    while (k < rest.size() && rest[k] == ' ') ++k;
    if (k < rest.size() && is_digit(rest[k])) return finish(*number_at_or_after(rest, k));
  }
  return std::nullopt;
}

template <typename R>
R to_rating(const RatingMatch& m, const std::string& field) {
  if (m.echoed_placeholder)
    throw ParseError(ParseErrc::AmbiguousLabel, field, "response echoed the rating options");
  if (m.value.find('.') != std::string::npos)
    throw ParseError(ParseErrc::OutOfRange, field, "non-integer rating " + m.value);
  long v = 0;
  try {
    v = std::stol(m.value);
  } catch (const std::exception&) {
    throw ParseError(ParseErrc::OutOfRange, field, "rating " + m.value);
  }
  if (v < R::min || v > R::max)
    throw ParseError(ParseErrc::OutOfRange, field,
                     "rating " + m.value + " outside " + std::to_string(R::min) + ".." +
                         std::to_string(R::max));
  return R(static_cast<int>(v), field);
}

/// First line starting with any alias that carries a rating.
template <typename R>
R find_rating(const std::vector<std::string>& lines, std::string_view field,
              std::initializer_list<std::string_view> aliases) {
  for (const auto& line : lines) {
    for (std::string_view alias : aliases) {
      if (!starts_with_word(line, alias)) continue;
      std::string_view rest = std::string_view(line).substr(alias.size());
      if (auto m = rating_in(rest, R::max)) return to_rating<R>(*m, std::string(field));
    }
  }
  throw ParseError(ParseErrc::MissingField, std::string(field));
}

/// Rapport aspect lines often restate the item ("There is mutual trust ...: 6"),
/// so the keyword may appear anywhere in the line.
BondRating find_bond_rating(const std::vector<std::string>& lines, std::string_view field,
                            std::string_view keyword, bool skip_overall) {
  for (const auto& line : lines) {
    const std::string lower = to_lower(line);
    if (skip_overall && lower.find("overall") != std::string::npos) continue;
    auto at = lower.find(keyword);
    if (at == std::string::npos) continue;
    std::size_t end = at + keyword.size();
    while (end < line.size() && std::isalpha(static_cast<unsigned char>(line[end]))) ++end;
    if (auto m = rating_in(std::string_view(line).substr(end), BondRating::max))
      return to_rating<BondRating>(*m, std::string(field));
  }
  throw ParseError(ParseErrc::MissingField, std::string(field));
}

std::string find_text(const std::vector<std::string>& lines, std::string_view prefix) {
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (!starts_with_word(lines[i], prefix)) continue;
    auto colon = lines[i].find(':');
    std::string_view v = colon == std::string::npos ? std::string_view{}
                                                    : trim(std::string_view(lines[i]).substr(colon + 1));
    if (!v.empty()) return std::string(v);
    for (std::size_t j = i + 1; j < lines.size(); ++j)
      if (!trim(lines[j]).empty()) return std::string(trim(lines[j]));
    return {};
  }
  return {};
}

/// Text following "Label:" (or the next non-empty line if that is blank).
std::optional<std::string> label_text(const std::vector<std::string>& lines) {
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (!starts_with_word(lines[i], "label")) continue;
    std::string_view rest = std::string_view(lines[i]).substr(5);
    auto colon = rest.find(':');
    if (colon != std::string_view::npos) rest = rest.substr(colon + 1);
    rest = trim(rest);
    if (!rest.empty()) return std::string(rest);
    for (std::size_t j = i + 1; j < lines.size(); ++j)
      if (!trim(lines[j]).empty()) return std::string(trim(lines[j]));
    return std::string{};
  }
  return std::nullopt;
}

std::size_t count_occurrences(const std::string& hay, std::string_view needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + needle.size())) ++n;
  return n;
}

ReflectionScore parse_reflection(const std::vector<std::string>& lines) {
  auto label = label_text(lines);
  if (!label) throw ParseError(ParseErrc::MissingField, "Label");
  std::string squashed;
  for (char c : to_lower(*label))
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '/') squashed.push_back(c);
  const std::size_t non = count_occurrences(squashed, "nonreflection") +
                          count_occurrences(squashed, "notareflection");
  const std::size_t all = count_occurrences(squashed, "reflection");
  const std::size_t plain = all - non;
  if (non > 0 && plain > 0)
    throw ParseError(ParseErrc::AmbiguousLabel, "Label", "both Reflection and Non-Reflection in '" + *label + "'");
  if (non == 0 && plain == 0)
    throw ParseError(ParseErrc::MissingField, "Label", "no Reflection/Non-Reflection label in '" + *label + "'");
  return ReflectionScore{non > 0 ? ReflectionLabel::NonReflection : ReflectionLabel::Reflection,
                         find_text(lines, "reasoning")};
}

DisclosureScore parse_disclosure(const std::vector<std::string>& lines) {
  auto label = label_text(lines);
  if (!label) throw ParseError(ParseErrc::MissingField, "Label");
  std::set<DisclosureLabel> found;
  std::string word;
  auto flush = [&] {
    if (word == "g" || word == "general") found.insert(DisclosureLabel::General);
    else if (word == "m" || word == "medium") found.insert(DisclosureLabel::Medium);
    else if (word == "h" || word == "high") found.insert(DisclosureLabel::High);
    word.clear();
  };
  for (char c : to_lower(*label)) {
    if (std::isalpha(static_cast<unsigned char>(c))) word.push_back(c);
    else flush();
  }
  flush();
  if (found.size() > 1)
    throw ParseError(ParseErrc::AmbiguousLabel, "Label", "several levels in '" + *label + "'");
  if (found.empty())
    throw ParseError(ParseErrc::MissingField, "Label", "no G/M/H level in '" + *label + "'");
  return DisclosureScore{*found.begin(), find_text(lines, "reasoning")};
}

}  // namespace

RawScore parse_response(ConstructId id, std::string_view text) {
  if (trim(text).empty()) throw std::invalid_argument("parse_response: empty response text");
  const auto lines = normalized_lines(text);
  switch (id) {
    case ConstructId::EmpathyEpitome:
      return EpitomeScore{
          find_rating<MechanismRating>(lines, "Emotional Reactions",
                                       {"emotional reactions", "emotional reaction"}),
          find_rating<MechanismRating>(lines, "Interpretations", {"interpretations", "interpretation"}),
          find_rating<MechanismRating>(lines, "Explorations", {"explorations", "exploration"}),
          find_text(lines, "explanation")};
    case ConstructId::EmpathyReflection: return parse_reflection(lines);
    case ConstructId::SelfDisclosure: return parse_disclosure(lines);
    case ConstructId::Emotion: {
      EmotionScore s;
      for (std::size_t i = 0; i < k_emotion_names.size(); ++i)
        s.ratings[i] = find_rating<EmotionRating>(lines, k_emotion_names[i], {k_emotion_names[i]});
      s.rationale = find_text(lines, "rationale");
      return s;
    }
    case ConstructId::Rapport:
      return RapportScore{find_bond_rating(lines, "Liking", "liking", true),
                          find_bond_rating(lines, "Confidence", "confiden", true),
                          find_bond_rating(lines, "Appreciation", "apprecia", true),
                          find_bond_rating(lines, "Trust", "trust", true),
                          find_bond_rating(lines, "Overall", "overall", false),
                          find_text(lines, "rationale")};
  }
  throw std::logic_error("parse_response: unknown construct");
}

std::string format_response(const RawScore& raw) {
  struct Formatter {
    std::string operator()(const EpitomeScore& s) const {
      return "- Explanation (<= 70 words): " + s.explanation +
             "\n- Emotional Reactions: " + std::to_string(s.emotional_reactions.value()) +
             "\n- Interpretations: " + std::to_string(s.interpretations.value()) +
             "\n- Explorations: " + std::to_string(s.explorations.value()) + "\n";
    }
    std::string operator()(const ReflectionScore& s) const {
      return "Reasoning (<= 70 words): " + s.reasoning + "\nLabel: " + std::string(label_name(s.label)) + "\n";
    }
    std::string operator()(const DisclosureScore& s) const {
      return "Reasoning (<= 50 words): " + s.reasoning + "\nLabel: " + std::string(label_name(s.label)) + "\n";
    }
    std::string operator()(const EmotionScore& s) const {
      std::string out;
      for (std::size_t i = 0; i < k_emotion_names.size(); ++i)
        out += std::string(k_emotion_names[i]) + ": " + std::to_string(s.ratings[i].value()) + "\n";
      return out + "Rationale: " + s.rationale + "\n";
    }
    std::string operator()(const RapportScore& s) const {
      return "Mutual liking: " + std::to_string(s.liking.value()) +
             "\nConfidence: " + std::to_string(s.confidence.value()) +
             "\nAppreciation: " + std::to_string(s.appreciation.value()) +
             "\nTrust: " + std::to_string(s.trust.value()) +
             "\nOverall bond rating: " + std::to_string(s.overall.value()) +
             "\nRationale: " + s.rationale + "\n";
    }
  };
  return std::visit(Formatter{}, raw);
}

std::vector<std::string> aggregate_dimensions(ConstructId id) {
  switch (id) {
    case ConstructId::EmpathyEpitome: return {"ER", "IP", "EX"};
    case ConstructId::EmpathyReflection: return {"Reflection"};
    case ConstructId::SelfDisclosure: return {"Disclosure"};
    case ConstructId::Emotion: return {k_emotion_names.begin(), k_emotion_names.end()};
    case ConstructId::Rapport: return {k_rapport_fields.begin(), k_rapport_fields.end()};
  }
  return {};
}

std::vector<double> aggregate(std::span<const RawScore> raws) {
  if (raws.empty()) throw std::invalid_argument("aggregate: no completions");
  const ConstructId id = construct_of(raws.front());
  for (const auto& r : raws)
    if (construct_of(r) != id) throw std::invalid_argument("aggregate: mixed constructs");

  std::vector<double> sum(aggregate_dimensions(id).size(), 0.0);
  for (const auto& r : raws) {
    std::visit(
        [&](const auto& s) {
          using T = std::decay_t<decltype(s)>;
          if constexpr (std::is_same_v<T, EpitomeScore>) {
            sum[0] += s.emotional_reactions;
            sum[1] += s.interpretations;
            sum[2] += s.explorations;
          } else if constexpr (std::is_same_v<T, ReflectionScore>) {
            sum[0] += s.label == ReflectionLabel::Reflection ? 1.0 : 0.0;
          } else if constexpr (std::is_same_v<T, DisclosureScore>) {
            sum[0] += static_cast<int>(s.label);
          } else if constexpr (std::is_same_v<T, EmotionScore>) {
            for (std::size_t i = 0; i < 9; ++i) sum[i] += s.ratings[i];
          } else {
            sum[0] += s.liking;
            sum[1] += s.confidence;
            sum[2] += s.appreciation;
            sum[3] += s.trust;
            sum[4] += s.overall;
          }
        },
        r);
  }
  for (double& v : sum) v /= static_cast<double>(raws.size());
  return sum;
}

ReflectionLabel majority_reflection(std::span<const RawScore> raws) {
  auto agg = aggregate(raws);
  if (construct_of(raws.front()) != ConstructId::EmpathyReflection)
    throw std::invalid_argument("majority_reflection: not reflection scores");
  return agg[0] >= 0.5 ? ReflectionLabel::Reflection : ReflectionLabel::NonReflection;
}

}  // namespace tdyn
