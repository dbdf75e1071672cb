#include "httplib.h"
#include "json.hpp"
#include "tdyn/backend.hpp"
#include "tdyn/util.hpp"

namespace tdyn {

using nlohmann::json;

HttpProvider::HttpProvider(HttpConfig config) : config_(std::move(config)) {
  const auto& url = config_.base_url;
  auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos)
    throw BackendError(BackendErrc::Config, "base_url '" + url + "' has no scheme");
  auto path_start = url.find('/', scheme_end + 3);
  scheme_host_ = url.substr(0, path_start);
  path_prefix_ = path_start == std::string::npos ? "" : url.substr(path_start);
  while (!path_prefix_.empty() && path_prefix_.back() == '/') path_prefix_.pop_back();
}

std::string HttpProvider::request_body(const CompletionRequest& r) {
  json body;
  body["model"] = r.model;
  body["temperature"] = r.temperature;
  body["n"] = 1;
  body["messages"] = json::array({
      {{"role", "system"}, {"content", r.system_message}},
      {{"role", "user"}, {"content", r.user_message}},
  });
  return body.dump();
}

std::string HttpProvider::response_text(const std::string& body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    throw BackendError(BackendErrc::Transient, std::string("unparseable response body: ") + e.what());
  }
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty())
    throw BackendError(BackendErrc::EmptyResponse, "response has no choices");
  const json& choice = j["choices"][0];
  if (choice.value("finish_reason", "") == "content_filter")
    throw BackendError(BackendErrc::Refusal, "provider filtered the completion");
  const json& msg = choice.value("message", json::object());
  if (msg.contains("refusal") && msg["refusal"].is_string() && !msg["refusal"].get<std::string>().empty())
    throw BackendError(BackendErrc::Refusal, "provider refused: " + msg["refusal"].get<std::string>());
  if (!msg.contains("content") || !msg["content"].is_string())
    throw BackendError(BackendErrc::EmptyResponse, "response message has no content");
  std::string text = msg["content"].get<std::string>();
  if (trim(text).empty()) throw BackendError(BackendErrc::EmptyResponse, "provider returned an empty completion");
  return text;
}

std::string HttpProvider::complete(const CompletionRequest& request) {
  httplib::Client client(scheme_host_);
  client.set_connection_timeout(config_.timeout);
  client.set_read_timeout(config_.timeout);
  client.set_write_timeout(config_.timeout);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  auto res = client.Post(path_prefix_ + "/chat/completions", headers, request_body(request), "application/json");
  if (!res) {
    const auto err = res.error();
    throw BackendError(err == httplib::Error::Read || err == httplib::Error::Write ? BackendErrc::Timeout
                                                                                     : BackendErrc::Network,
                       "request failed: " + httplib::to_string(err));
  }
  const int status = res->status;
  if (status == 429 || status >= 500)
    throw BackendError(BackendErrc::Transient, "HTTP " + std::to_string(status));
  if (status == 401 || status == 403)
    throw BackendError(BackendErrc::Config, "HTTP " + std::to_string(status) + ": check the API key");
  if (status != 200)
    throw BackendError(BackendErrc::Refusal, "HTTP " + std::to_string(status) + ": " + res->body.substr(0, 200));
  return response_text(res->body);
}

}  // namespace tdyn
