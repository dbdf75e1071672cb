#include "tdyn/constructs.hpp"

#include <algorithm>
#include <array>
#include <set>

#include "tdyn/util.hpp"

namespace tdyn {

const std::vector<ConstructInfo>& registry() {
  using K = ContextRule::Kind;
  static const std::vector<ConstructInfo> entries = {
      {ConstructId::EmpathyEpitome, {ScaleKind::Ordinal3x3, 0, 2, 3}, TargetLevel::Utterance,
       {K::PriorClientUtterances, 2}, Speaker::Therapist},
      {ConstructId::EmpathyReflection, {ScaleKind::Binary, 0, 1, 1}, TargetLevel::Utterance,
       {K::PriorClientUtterances, 2}, Speaker::Therapist},
      {ConstructId::SelfDisclosure, {ScaleKind::OrdinalGMH, 1, 3, 1}, TargetLevel::Utterance,
       {K::PriorUtterances, 2}, Speaker::Client},
      {ConstructId::Emotion, {ScaleKind::Likert5x9, 1, 5, 9}, TargetLevel::Utterance,
       {K::PriorUtterances, 5}, Speaker::Client},
      {ConstructId::Rapport, {ScaleKind::Likert7x5, 1, 7, 5}, TargetLevel::Segment,
       {K::WholeSegment, 0}, std::nullopt},
  };
  return entries;
}

const ConstructInfo& construct_info(ConstructId id) {
  return registry()[static_cast<std::size_t>(id)];
}

namespace {

std::vector<std::string_view> find_placeholders(std::string_view text) {
  std::vector<std::string_view> names;
  for (std::size_t pos = text.find('{'); pos != std::string_view::npos; pos = text.find('{', pos + 1)) {
    std::size_t close = text.find('}', pos);
    if (close == std::string_view::npos) break;
    std::string_view name = text.substr(pos + 1, close - pos - 1);
    if (!name.empty() && std::all_of(name.begin(), name.end(), [](char c) {
          return (c >= 'a' && c <= 'z') || c == '_';
        }))
      names.push_back(name);
  }
  return names;
}

const std::array<PromptTemplate, 5>& templates() {
  static const std::array<PromptTemplate, 5> table = [] {
    std::array<PromptTemplate, 5> t;
    for (ConstructId id : k_all_constructs) {
      const auto& e = detail::k_embedded_templates[static_cast<std::size_t>(id)];
      if (construct_name(id) != e.name)
        throw std::logic_error("embedded template order does not match ConstructId");
      t[static_cast<std::size_t>(id)] =
          PromptTemplate{e.system, e.user, e.system_sha256, e.user_sha256, find_placeholders(e.user)};
    }
    return t;
  }();
  return table;
}

[[noreturn]] void bad_shape(ConstructId id, const std::string& what) {
  throw PromptError(PromptErrc::WrongWindowShape,
                    std::string(construct_name(id)) + " window: " + what);
}

void require_single_target(ConstructId id, const ContextWindow& w, Speaker speaker) {
  if (w.target.kind != TargetKind::Utterance || w.targets.size() != 1)
    bad_shape(id, "expected exactly one target utterance");
  if (w.targets.front().speaker != speaker)
    bad_shape(id, std::string("target must be a ") +
                      (speaker == Speaker::Client ? "client" : "therapist") + " utterance");
  for (const auto& c : w.context)
    if (c.session_id != w.targets.front().session_id || c.index >= w.targets.front().index)
      bad_shape(id, "context must strictly precede the target");
}

}  // namespace

const PromptTemplate& prompt_template(ConstructId id) {
  return templates()[static_cast<std::size_t>(id)];
}

std::map<std::string, std::string> template_checksums() {
  std::map<std::string, std::string> out;
  for (const auto& e : detail::k_embedded_templates) {
    out[std::string(e.name) + ".system.txt"] = sha256_hex(e.system);
    out[std::string(e.name) + ".user.txt"] = sha256_hex(e.user);
  }
  return out;
}

std::vector<std::string> verify_template_manifest(std::string_view manifest_text) {
  std::map<std::string, std::string> expected;
  for (auto line : split_lines(manifest_text)) {
    line = trim(line);
    if (line.empty()) continue;
    auto sep = line.find("  ");
    if (sep == std::string_view::npos) continue;
    expected[std::string(line.substr(sep + 2))] = std::string(line.substr(0, sep));
  }
  std::vector<std::string> bad;
  for (const auto& [name, digest] : template_checksums()) {
    auto it = expected.find(name);
    if (it == expected.end() || it->second != digest) bad.push_back(name);
  }
  return bad;
}

std::string serialize_log(std::span<const Utterance> utterances) {
  std::string out;
  for (const auto& u : utterances) {
    if (!out.empty()) out.push_back('\n');
    out.push_back(speaker_tag(u.speaker));
    out += ": ";
    out += u.text;
  }
  return out;
}

std::string substitute(std::string_view templ, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(templ.size() + 256);
  std::set<std::string> used;
  std::size_t pos = 0;
  for (std::string_view name : find_placeholders(templ)) {
    // find_placeholders reports in order; locate this occurrence.
    std::string token = "{" + std::string(name) + "}";
    std::size_t at = templ.find(token, pos);
    auto it = values.find(std::string(name));
    if (it == values.end())
      throw PromptError(PromptErrc::MissingDatum, "no value for placeholder {" + std::string(name) + "}");
    out.append(templ.substr(pos, at - pos));
    out += it->second;
    used.insert(it->first);
    pos = at + token.size();
  }
  out.append(templ.substr(pos));
  for (const auto& [k, v] : values)
    if (!used.count(k))
      throw PromptError(PromptErrc::MissingDatum, "template has no placeholder {" + k + "}");
  return out;
}

RenderedPrompt render_prompt(ConstructId id, const ContextWindow& w,
                             std::optional<std::string_view> summary, const RenderOptions& options) {
  if (w.construct != id)
    bad_shape(id, std::string("window was built for ") + std::string(construct_name(w.construct)));
  const PromptTemplate& t = prompt_template(id);
  std::map<std::string, std::string> values;

  switch (id) {
    case ConstructId::EmpathyEpitome:
    case ConstructId::EmpathyReflection: {
      require_single_target(id, w, Speaker::Therapist);
      if (w.context.size() > 2) bad_shape(id, "at most two prior client utterances");
      std::string client;
      for (std::size_t i = 0; i < w.context.size(); ++i) {
        if (w.context[i].speaker != Speaker::Client) bad_shape(id, "context must be client turns");
        if (i + 1 < w.context.size() && !options.include_auxiliary_client) continue;
        if (!client.empty()) client.push_back('\n');
        client += w.context[i].text;
      }
      const bool epitome = id == ConstructId::EmpathyEpitome;
      values[epitome ? "client_speech" : "client_utt"] = std::move(client);
      values[epitome ? "therapist_response" : "therapist_utt"] = w.targets.front().text;
      break;
    }
    case ConstructId::SelfDisclosure: {
      require_single_target(id, w, Speaker::Client);
      if (w.context.size() > 2) bad_shape(id, "at most two prior utterances");
      if (!summary)
        throw PromptError(PromptErrc::MissingDatum,
                          "self_disclosure needs a session summary (may be empty)");
      std::string background(*summary);
      if (!w.context.empty()) {
        if (!background.empty()) background.push_back('\n');
        background += serialize_log(w.context);
      }
      values["summary"] = std::move(background);
      values["utterance"] = w.targets.front().text;
      break;
    }
    case ConstructId::Emotion: {
      require_single_target(id, w, Speaker::Client);
      if (w.context.size() > 5) bad_shape(id, "at most five prior utterances");
      values["context"] = serialize_log(w.context);
      values["text"] = w.targets.front().text;
      break;
    }
    case ConstructId::Rapport: {
      if (w.target.kind != TargetKind::Segment || w.targets.empty())
        bad_shape(id, "expected a non-empty segment");
      if (!w.context.empty()) bad_shape(id, "segment windows take no extra context");
      values["conversation_log"] = serialize_log(w.targets);
      break;
    }
  }
  return RenderedPrompt{std::string(t.system_message), substitute(t.user_template, values)};
}

}  // namespace tdyn
