#pragma once

#include <algorithm>
#include <chrono>
#include <cstddef>
#include <cstdlib>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace rsearch::backends {

enum class FinishReason { StopSequence, EndOfMessage, LengthLimit };

struct GenerationRequest {
  std::string system_prompt;
  std::string transcript;  // everything after the system prompt
  std::vector<std::string> stop_sequences;
  double temperature = 1.0;
  std::size_t max_new_bytes = 1 << 15;
};

struct GenerationResult {
  std::string text;  // includes the matched stop sequence when one fired
  FinishReason finished_by = FinishReason::EndOfMessage;
};

enum class BackendErrorKind {
  Timeout,
  Transport,
  HttpStatus,
  Quota,
  SchemaViolation,
  ScriptExhausted,
};

class BackendError : public std::runtime_error {
 public:
  BackendError(BackendErrorKind kind, bool retryable, std::string episode_id,
               const std::string& what)
      : std::runtime_error(what),
        kind_(kind),
        retryable_(retryable),
        episode_id_(std::move(episode_id)) {}

  BackendErrorKind kind() const { return kind_; }
  bool retryable() const { return retryable_; }
  const std::string& episode_id() const { return episode_id_; }

 private:
  BackendErrorKind kind_;
  bool retryable_;
  std::string episode_id_;
};

/// Text-generation service. Implementations must tolerate concurrent
/// generate() calls from independent episodes.
class GenerationBackend {
 public:
  virtual ~GenerationBackend() = default;
  virtual GenerationResult generate(const std::string& episode_id,
                                    const GenerationRequest& req) = 0;
  virtual std::string family() const = 0;
};

namespace detail {

/// Normalizes a raw continuation against the request contract: truncate at
/// the first stop sequence (kept in the text), then at the byte budget.
inline GenerationResult finalize(std::string text,
                                 const GenerationRequest& req) {
  std::size_t best_end = std::string::npos;
  for (const auto& stop : req.stop_sequences) {
    if (stop.empty()) continue;
    std::size_t p = text.find(stop);
    if (p != std::string::npos && p + stop.size() < best_end)
      best_end = p + stop.size();
  }
  if (best_end != std::string::npos && best_end <= req.max_new_bytes) {
    text.resize(best_end);
    return {std::move(text), FinishReason::StopSequence};
  }
  if (text.size() > req.max_new_bytes) {
    text.resize(req.max_new_bytes);
    return {std::move(text), FinishReason::LengthLimit};
  }
  return {std::move(text), FinishReason::EndOfMessage};
}

}  // namespace detail

/// Deterministic replay backend. A shared script is replayed from the start
/// for every episode id; per-episode scripts replay their own entries.
class ScriptedBackend : public GenerationBackend {
 public:
  explicit ScriptedBackend(std::vector<std::string> script,
                           std::string family = "scripted")
      : shared_script_(std::move(script)), family_(std::move(family)) {
    if (shared_script_.empty())
      throw std::invalid_argument("scripted backend: empty script");
  }

  explicit ScriptedBackend(std::map<std::string, std::vector<std::string>> per_episode,
                           std::string family = "scripted")
      : per_episode_(std::move(per_episode)), family_(std::move(family)) {}

  /// Script fixture file: JSON-lines with fields episode, step, text.
  static ScriptedBackend from_jsonl(std::istream& in,
                                    std::string family = "scripted") {
    std::map<std::string, std::vector<std::pair<int, std::string>>> staged;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      nlohmann::json j;
      try {
        j = nlohmann::json::parse(line);
      } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("script line " + std::to_string(line_no) +
                                 ": " + e.what());
      }
      if (!j.contains("episode") || !j.contains("step") || !j.contains("text"))
        throw std::runtime_error("script line " + std::to_string(line_no) +
                                 ": missing episode/step/text");
      staged[j["episode"].get<std::string>()].emplace_back(
          j["step"].get<int>(), j["text"].get<std::string>());
    }
    std::map<std::string, std::vector<std::string>> per_episode;
    for (auto& [episode, steps] : staged) {
      std::sort(steps.begin(), steps.end());
      auto& texts = per_episode[episode];
      for (auto& [step, text] : steps) texts.push_back(std::move(text));
    }
    return ScriptedBackend(std::move(per_episode), std::move(family));
  }

  GenerationResult generate(const std::string& episode_id,
                            const GenerationRequest& req) override {
    std::string text;
    {
      std::lock_guard<std::mutex> lock(*mu_);
      const std::vector<std::string>* script = &shared_script_;
      if (!per_episode_.empty()) {
        auto it = per_episode_.find(episode_id);
        if (it == per_episode_.end())
          throw BackendError(BackendErrorKind::ScriptExhausted, false,
                             episode_id, "no script for episode " + episode_id);
        script = &it->second;
      }
      std::size_t& cursor = cursors_[episode_id];
      if (cursor >= script->size())
        throw BackendError(BackendErrorKind::ScriptExhausted, false, episode_id,
                           "script exhausted for episode " + episode_id);
      text = (*script)[cursor++];
    }
    return detail::finalize(std::move(text), req);
  }

  std::string family() const override { return family_; }

 private:
  std::vector<std::string> shared_script_;
  std::map<std::string, std::vector<std::string>> per_episode_;
  std::map<std::string, std::size_t> cursors_;
  std::unique_ptr<std::mutex> mu_ = std::make_unique<std::mutex>();
  std::string family_;
};

struct ChatBackendConfig {
  std::string base_url;  // e.g. http://localhost:8000
  std::string model;
  std::string family;
  std::string api_key_env = "RSEARCH_API_KEY";
  int max_retries = 3;
  int initial_backoff_ms = 200;
  int timeout_sec = 60;
};

/// Client for the chat-completions wire protocol:
/// POST {base}/v1/chat/completions with model, messages, temperature,
/// stop, max_tokens. Retries transient failures with exponential backoff.
class ChatCompletionsBackend : public GenerationBackend {
 public:
  explicit ChatCompletionsBackend(ChatBackendConfig cfg)
      : cfg_(std::move(cfg)) {}

  GenerationResult generate(const std::string& episode_id,
                            const GenerationRequest& req) override {
    int backoff_ms = cfg_.initial_backoff_ms;
    for (int attempt = 0;; ++attempt) {
      try {
        return generate_once(episode_id, req);
      } catch (const BackendError& e) {
        if (!e.retryable() || attempt >= cfg_.max_retries) throw;
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff_ms));
        backoff_ms *= 2;
      }
    }
  }

  std::string family() const override { return cfg_.family; }

 private:
  GenerationResult generate_once(const std::string& episode_id,
                                 const GenerationRequest& req) {
    nlohmann::json body{
        {"model", cfg_.model},
        {"messages",
         {{{"role", "system"}, {"content", req.system_prompt}},
          {{"role", "user"}, {"content", req.transcript}}}},
        {"temperature", req.temperature},
        {"max_tokens", static_cast<long>(req.max_new_bytes)},
    };
    if (!req.stop_sequences.empty()) body["stop"] = req.stop_sequences;

    httplib::Client client(cfg_.base_url);
    client.set_connection_timeout(cfg_.timeout_sec);
    client.set_read_timeout(cfg_.timeout_sec);
    httplib::Headers headers;
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()))
      headers.emplace("Authorization", std::string("Bearer ") + key);

    auto res = client.Post("/v1/chat/completions", headers, body.dump(),
                           "application/json");
    if (!res) {
      bool timeout = res.error() == httplib::Error::ConnectionTimeout ||
                     res.error() == httplib::Error::Read;
      throw BackendError(timeout ? BackendErrorKind::Timeout
                                 : BackendErrorKind::Transport,
                         true, episode_id,
                         "chat backend transport failure: " +
                             httplib::to_string(res.error()));
    }
    if (res->status == 429)
      throw BackendError(BackendErrorKind::Quota, true, episode_id,
                         "chat backend rate limited");
    if (res->status >= 500)
      throw BackendError(BackendErrorKind::HttpStatus, true, episode_id,
                         "chat backend status " + std::to_string(res->status));
    if (res->status != 200)
      throw BackendError(BackendErrorKind::HttpStatus, false, episode_id,
                         "chat backend status " + std::to_string(res->status));

    nlohmann::json j;
    try {
      j = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
      throw BackendError(BackendErrorKind::SchemaViolation, false, episode_id,
                         std::string("chat backend bad json: ") + e.what());
    }
    if (!j.contains("choices") || !j["choices"].is_array() ||
        j["choices"].empty() || !j["choices"][0].contains("message"))
      throw BackendError(BackendErrorKind::SchemaViolation, false, episode_id,
                         "chat backend response missing choices[0].message");

    std::string text =
        j["choices"][0]["message"].value("content", std::string());
    std::string finish = j["choices"][0].value("finish_reason", "stop");

    // Servers differ on whether the matched stop sequence is returned;
    // re-attach it so the rollout text keeps closed tags.
    if (finish == "stop" && !req.stop_sequences.empty()) {
      bool ends_with_stop = false;
      for (const auto& stop : req.stop_sequences)
        if (text.size() >= stop.size() &&
            text.compare(text.size() - stop.size(), stop.size(), stop) == 0)
          ends_with_stop = true;
      if (!ends_with_stop) {
        for (const auto& stop : req.stop_sequences) {
          // An unclosed <search> with a </search> stop means the server
          // stripped the match.
          if (stop == "</search>" &&
              text.rfind("<search>") != std::string::npos &&
              text.find("</search>", text.rfind("<search>")) ==
                  std::string::npos) {
            text += stop;
            break;
          }
        }
      }
    }

    auto result = detail::finalize(std::move(text), req);
    if (result.finished_by == FinishReason::EndOfMessage && finish == "length")
      result.finished_by = FinishReason::LengthLimit;
    return result;
  }

  ChatBackendConfig cfg_;
};

}  // namespace rsearch::backends
