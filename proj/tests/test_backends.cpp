#include <doctest.h>

#include <httplib.h>

#include <atomic>
#include <sstream>
#include <thread>

#include "rsearch/backends.hpp"

using namespace rsearch::backends;

namespace {

GenerationRequest plain_request() {
  GenerationRequest req;
  req.system_prompt = "system";
  req.transcript = "Question: q\n";
  return req;
}

}  // namespace

TEST_CASE("finalize applies stop truncation then the byte budget") {
  GenerationRequest req = plain_request();
  req.stop_sequences = {"</search>"};

  auto stopped =
      detail::finalize("think <search>who?</search> trailing garbage", req);
  CHECK(stopped.text == "think <search>who?</search>");
  CHECK(stopped.finished_by == FinishReason::StopSequence);

  auto whole = detail::finalize("no stop here", req);
  CHECK(whole.text == "no stop here");
  CHECK(whole.finished_by == FinishReason::EndOfMessage);

  req.max_new_bytes = 4;
  auto clipped = detail::finalize("longer than four", req);
  CHECK(clipped.text == "long");
  CHECK(clipped.finished_by == FinishReason::LengthLimit);

  // A stop match past the budget cannot fire.
  auto late = detail::finalize("xxxxxxxx</search>", req);
  CHECK(late.text == "xxxx");
  CHECK(late.finished_by == FinishReason::LengthLimit);

  // Earliest stop wins across multiple sequences.
  GenerationRequest multi = plain_request();
  multi.stop_sequences = {"</answer>", "</search>"};
  auto first = detail::finalize("a</search>b</answer>", multi);
  CHECK(first.text == "a</search>");
  CHECK(first.finished_by == FinishReason::StopSequence);
}

TEST_CASE("shared scripts replay from the start for each episode") {
  ScriptedBackend backend(std::vector<std::string>{"one", "two"});
  auto req = plain_request();
  CHECK(backend.generate("a", req).text == "one");
  CHECK(backend.generate("a", req).text == "two");
  CHECK(backend.generate("b", req).text == "one");

  try {
    backend.generate("a", req);
    FAIL("expected exhaustion");
  } catch (const BackendError& e) {
    CHECK(e.kind() == BackendErrorKind::ScriptExhausted);
    CHECK(!e.retryable());
    CHECK(e.episode_id() == "a");
  }
  // Other episodes keep their own cursor.
  CHECK(backend.generate("b", req).text == "two");
}

TEST_CASE("per-episode scripts are keyed and ordered by step") {
  std::stringstream jsonl(
      R"({"episode":"e1","step":2,"text":"second"})"
      "\n"
      R"({"episode":"e1","step":1,"text":"first"})"
      "\n"
      R"({"episode":"e2","step":1,"text":"other"})"
      "\n");
  auto backend = ScriptedBackend::from_jsonl(jsonl, "qwen");
  CHECK(backend.family() == "qwen");

  auto req = plain_request();
  CHECK(backend.generate("e1", req).text == "first");
  CHECK(backend.generate("e2", req).text == "other");
  CHECK(backend.generate("e1", req).text == "second");

  CHECK_THROWS_AS(backend.generate("unknown", req), BackendError);
}

TEST_CASE("script fixture parse errors carry line numbers") {
  std::stringstream bad("not json\n");
  CHECK_THROWS_WITH(ScriptedBackend::from_jsonl(bad),
                    doctest::Contains("line 1"));

  std::stringstream missing(R"({"episode":"e1","text":"x"})" "\n");
  CHECK_THROWS_WITH(ScriptedBackend::from_jsonl(missing),
                    doctest::Contains("line 1"));

  CHECK_THROWS_AS(ScriptedBackend(std::vector<std::string>{}),
                  std::invalid_argument);
}

TEST_CASE("scripted generation honors the request contract") {
  ScriptedBackend backend(
      std::vector<std::string>{"lead <search>q</search> tail"});
  auto req = plain_request();
  req.stop_sequences = {"</search>"};
  auto result = backend.generate("a", req);
  CHECK(result.text == "lead <search>q</search>");
  CHECK(result.finished_by == FinishReason::StopSequence);

  ScriptedBackend clipped(std::vector<std::string>{"abcdef"});
  auto tight = plain_request();
  tight.max_new_bytes = 1;
  auto r2 = clipped.generate("a", tight);
  CHECK(r2.text == "a");
  CHECK(r2.finished_by == FinishReason::LengthLimit);
}

TEST_CASE("chat backend round trip against a stub server") {
  httplib::Server server;
  std::string seen_body;
  server.Post("/v1/chat/completions",
              [&](const httplib::Request& req, httplib::Response& res) {
                seen_body = req.body;
                nlohmann::json out{
                    {"choices",
                     {{{"message",
                        {{"role", "assistant"},
                         {"content", "thinking <search>who?</search>"}}},
                       {"finish_reason", "stop"}}}}};
                res.set_content(out.dump(), "application/json");
              });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ChatBackendConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  cfg.model = "test-model";
  cfg.family = "qwen";
  ChatCompletionsBackend backend(cfg);
  CHECK(backend.family() == "qwen");

  auto req = plain_request();
  req.stop_sequences = {"</search>"};
  req.temperature = 0.7;
  auto result = backend.generate("ep", req);
  CHECK(result.text == "thinking <search>who?</search>");
  CHECK(result.finished_by == FinishReason::StopSequence);

  auto body = nlohmann::json::parse(seen_body);
  CHECK(body["model"] == "test-model");
  CHECK(body["temperature"] == 0.7);
  CHECK(body["stop"] == nlohmann::json::array({"</search>"}));
  REQUIRE(body["messages"].size() == 2);
  CHECK(body["messages"][0]["role"] == "system");
  CHECK(body["messages"][0]["content"] == "system");
  CHECK(body["messages"][1]["role"] == "user");

  server.stop();
  worker.join();
}

TEST_CASE("chat backend re-attaches a server-stripped stop sequence") {
  httplib::Server server;
  server.Post("/v1/chat/completions",
              [](const httplib::Request&, httplib::Response& res) {
                nlohmann::json out{
                    {"choices",
                     {{{"message", {{"content", "lead <search>who?"}}},
                       {"finish_reason", "stop"}}}}};
                res.set_content(out.dump(), "application/json");
              });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ChatBackendConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  ChatCompletionsBackend backend(cfg);
  auto req = plain_request();
  req.stop_sequences = {"</search>"};
  auto result = backend.generate("ep", req);
  CHECK(result.text == "lead <search>who?</search>");
  CHECK(result.finished_by == FinishReason::StopSequence);

  server.stop();
  worker.join();
}

TEST_CASE("chat backend retries transient failures") {
  std::atomic<int> calls{0};
  httplib::Server server;
  server.Post("/v1/chat/completions",
              [&](const httplib::Request&, httplib::Response& res) {
                if (calls.fetch_add(1) == 0) {
                  res.status = 500;
                  return;
                }
                nlohmann::json out{
                    {"choices",
                     {{{"message", {{"content", "recovered"}}},
                       {"finish_reason", "stop"}}}}};
                res.set_content(out.dump(), "application/json");
              });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ChatBackendConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  cfg.initial_backoff_ms = 1;
  ChatCompletionsBackend backend(cfg);
  auto result = backend.generate("ep", plain_request());
  CHECK(result.text == "recovered");
  CHECK(calls.load() == 2);

  server.stop();
  worker.join();
}

TEST_CASE("chat backend error classification") {
  httplib::Server server;
  server.Post("/v1/chat/completions",
              [](const httplib::Request& req, httplib::Response& res) {
                auto body = nlohmann::json::parse(req.body);
                std::string model = body["model"].get<std::string>();
                if (model == "notfound") {
                  res.status = 404;
                } else if (model == "quota") {
                  res.status = 429;
                } else if (model == "badjson") {
                  res.set_content("not json", "application/json");
                } else {
                  res.set_content(R"({"choices":[]})", "application/json");
                }
              });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ChatBackendConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  cfg.max_retries = 0;
  cfg.initial_backoff_ms = 1;

  auto expect_kind = [&](const std::string& model, BackendErrorKind kind,
                         bool retryable) {
    ChatBackendConfig c = cfg;
    c.model = model;
    ChatCompletionsBackend backend(c);
    try {
      backend.generate("ep", plain_request());
      FAIL(("expected backend error for model " + model).c_str());
    } catch (const BackendError& e) {
      CHECK(e.kind() == kind);
      CHECK(e.retryable() == retryable);
      CHECK(e.episode_id() == "ep");
    }
  };
  expect_kind("notfound", BackendErrorKind::HttpStatus, false);
  expect_kind("quota", BackendErrorKind::Quota, true);
  expect_kind("badjson", BackendErrorKind::SchemaViolation, false);
  expect_kind("emptychoices", BackendErrorKind::SchemaViolation, false);

  server.stop();
  worker.join();

  // Nothing listens here: transport failure, still retryable.
  ChatBackendConfig dead = cfg;
  dead.base_url = "http://127.0.0.1:1";
  ChatCompletionsBackend backend(dead);
  try {
    backend.generate("ep", plain_request());
    FAIL("expected transport error");
  } catch (const BackendError& e) {
    CHECK((e.kind() == BackendErrorKind::Transport ||
           e.kind() == BackendErrorKind::Timeout));
    CHECK(e.retryable());
  }
}

TEST_CASE("chat backend maps finish_reason length") {
  httplib::Server server;
  server.Post("/v1/chat/completions",
              [](const httplib::Request&, httplib::Response& res) {
                nlohmann::json out{
                    {"choices",
                     {{{"message", {{"content", "truncated tex"}}},
                       {"finish_reason", "length"}}}}};
                res.set_content(out.dump(), "application/json");
              });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ChatBackendConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  ChatCompletionsBackend backend(cfg);
  auto result = backend.generate("ep", plain_request());
  CHECK(result.text == "truncated tex");
  CHECK(result.finished_by == FinishReason::LengthLimit);

  server.stop();
  worker.join();
}
