#include <atomic>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "tdyn/backend.hpp"

using namespace tdyn;
using nlohmann::json;

namespace {

std::string ok_body(const std::string& content) {
  return json{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", content}}},
                                        {"finish_reason", "stop"}}})}}
      .dump();
}

struct LocalServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;
  std::atomic<int> status{200};
  std::string body = ok_body("Label: Reflection");
  std::string last_auth, last_body, last_path;

  LocalServer() {
    server.Post(R"(/.*)", [this](const httplib::Request& req, httplib::Response& res) {
      last_path = req.path;
      last_auth = req.get_header_value("Authorization");
      last_body = req.body;
      res.status = status;
      res.set_content(body, "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    thread.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1/"; }
};

BackendErrc error_of(HttpProvider& p) {
  try {
    p.complete({"S", "U", "m", 0.7, 0});
  } catch (const BackendError& e) {
    return e.code();
  }
  FAIL("no error");
  return BackendErrc::Config;
}

}  // namespace

TEST_CASE("request body follows chat-completions shape") {
  const auto j = json::parse(HttpProvider::request_body({"sys", "usr", "gpt-x", 0.25, 4}));
  CHECK(j["model"] == "gpt-x");
  CHECK(j["temperature"] == 0.25);
  CHECK(j["n"] == 1);
  REQUIRE(j["messages"].size() == 2);
  CHECK(j["messages"][0]["role"] == "system");
  CHECK(j["messages"][0]["content"] == "sys");
  CHECK(j["messages"][1]["role"] == "user");
  CHECK(j["messages"][1]["content"] == "usr");
}

TEST_CASE("response_text extraction and failures") {
  CHECK(HttpProvider::response_text(ok_body("hi")) == "hi");
  auto code = [](const std::string& body) {
    try {
      HttpProvider::response_text(body);
    } catch (const BackendError& e) {
      return e.code();
    }
    return BackendErrc::Config;
  };
  CHECK(code("{") == BackendErrc::Transient);
  CHECK(code(R"({"choices":[]})") == BackendErrc::EmptyResponse);
  CHECK(code(ok_body("  \n")) == BackendErrc::EmptyResponse);
  CHECK(code(R"({"choices":[{"message":{"content":null}}]})") == BackendErrc::EmptyResponse);
  CHECK(code(R"({"choices":[{"message":{"content":"x"},"finish_reason":"content_filter"}]})") ==
        BackendErrc::Refusal);
  CHECK(code(R"({"choices":[{"message":{"content":null,"refusal":"no"}}]})") == BackendErrc::Refusal);
}

TEST_CASE("http provider against a local server") {
  LocalServer srv;
  HttpProvider p({srv.url(), "secret-key", std::chrono::seconds(5)});
  CHECK(p.complete({"S", "U", "m", 0.7, 0}) == "Label: Reflection");
  CHECK(srv.last_path == "/v1/chat/completions");
  CHECK(srv.last_auth == "Bearer secret-key");
  CHECK(json::parse(srv.last_body)["messages"][1]["content"] == "U");

  srv.status = 429;
  CHECK(error_of(p) == BackendErrc::Transient);
  srv.status = 503;
  CHECK(error_of(p) == BackendErrc::Transient);
  srv.status = 401;
  CHECK(error_of(p) == BackendErrc::Config);
  srv.status = 400;
  CHECK(error_of(p) == BackendErrc::Refusal);
}

TEST_CASE("unreachable host is a network error") {
  int port = 0;
  {
    httplib::Server s;
    port = s.bind_to_any_port("127.0.0.1");
  }
  HttpProvider p({"http://127.0.0.1:" + std::to_string(port), "", std::chrono::seconds(2)});
  const auto code = error_of(p);
  CHECK((code == BackendErrc::Network || code == BackendErrc::Timeout));
  CHECK_THROWS_AS(HttpProvider({"no-scheme", "", std::chrono::seconds(1)}), BackendError);
}
