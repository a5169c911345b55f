#pragma once

#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "rsearch/backends.hpp"
#include "rsearch/rewards.hpp"
#include "rsearch/rollout.hpp"
#include "rsearch/templates.hpp"

namespace rsearch::config {

struct BackendSpec {
  std::string family;
  std::optional<std::string> script_path;  // scripted replay mode
  std::optional<std::string> base_url;     // live chat-completions mode
  std::string model;
};

struct RetrieverSpec {
  std::optional<std::string> corpus_path;  // local BM25 over a JSONL corpus
  std::optional<std::string> endpoint;     // remote retrieval service
};

struct EngineConfig {
  BackendSpec policy;
  std::optional<BackendSpec> cross_family;
  std::optional<BackendSpec> downstream;  // RSTool answer generation
  RetrieverSpec retriever;
  rollout::RolloutConfig rollout;
  rewards::RewardConfig reward;
  int workers = 1;
  long seed = 0;
  // Pass-through trainer metadata; the engine does not consume it.
  std::optional<double> kl_coefficient;
};

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline BackendSpec parse_backend(const nlohmann::json& j,
                                 const std::string& path) {
  BackendSpec spec;
  if (!j.contains("family") || !j["family"].is_string() ||
      j["family"].get<std::string>().empty())
    throw ConfigError(path + ".family: required non-empty string");
  spec.family = j["family"].get<std::string>();
  if (j.contains("script")) spec.script_path = j["script"].get<std::string>();
  if (j.contains("base_url")) spec.base_url = j["base_url"].get<std::string>();
  if (j.contains("model")) spec.model = j["model"].get<std::string>();
  if (spec.script_path.has_value() == spec.base_url.has_value())
    throw ConfigError(path + ": exactly one of script or base_url required");
  return spec;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace detail

inline EngineConfig parse_config(const nlohmann::json& j) {
  EngineConfig cfg;
  if (!j.contains("policy")) throw ConfigError("policy: required");
  cfg.policy = detail::parse_backend(j["policy"], "policy");
  if (j.contains("cross_family"))
    cfg.cross_family = detail::parse_backend(j["cross_family"], "cross_family");
  if (j.contains("downstream"))
    cfg.downstream = detail::parse_backend(j["downstream"], "downstream");

  if (!j.contains("retriever")) throw ConfigError("retriever: required");
  const auto& r = j["retriever"];
  if (r.contains("corpus"))
    cfg.retriever.corpus_path = r["corpus"].get<std::string>();
  if (r.contains("endpoint"))
    cfg.retriever.endpoint = r["endpoint"].get<std::string>();
  if (cfg.retriever.corpus_path.has_value() ==
      cfg.retriever.endpoint.has_value())
    throw ConfigError("retriever: exactly one of corpus or endpoint required");

  if (j.contains("rollout")) {
    const auto& ro = j["rollout"];
    if (ro.contains("top_k")) cfg.rollout.top_k = ro["top_k"].get<std::size_t>();
    if (ro.contains("max_search_rounds"))
      cfg.rollout.max_search_rounds = ro["max_search_rounds"].get<std::size_t>();
    if (ro.contains("max_total_bytes"))
      cfg.rollout.max_total_bytes = ro["max_total_bytes"].get<std::size_t>();
    if (ro.contains("samples_per_prompt"))
      cfg.rollout.samples_per_prompt =
          ro["samples_per_prompt"].get<std::size_t>();
    if (ro.contains("temperature"))
      cfg.rollout.temperature = ro["temperature"].get<double>();
    if (ro.contains("on_retrieval_error")) {
      std::string v = ro["on_retrieval_error"].get<std::string>();
      if (v == "abort")
        cfg.rollout.on_retrieval_error = rollout::RetrievalErrorPolicy::Abort;
      else if (v == "empty_observation")
        cfg.rollout.on_retrieval_error =
            rollout::RetrievalErrorPolicy::EmptyObservation;
      else
        throw ConfigError("rollout.on_retrieval_error: unknown value " + v);
    }
    if (ro.contains("on_backend_error")) {
      std::string v = ro["on_backend_error"].get<std::string>();
      if (v == "propagate")
        cfg.rollout.on_backend_error = rollout::BackendErrorPolicy::Propagate;
      else if (v == "keep_episode")
        cfg.rollout.on_backend_error = rollout::BackendErrorPolicy::KeepEpisode;
      else
        throw ConfigError("rollout.on_backend_error: unknown value " + v);
    }
    if (cfg.rollout.top_k < 1) throw ConfigError("rollout.top_k: must be >= 1");
    if (cfg.rollout.samples_per_prompt < 1)
      throw ConfigError("rollout.samples_per_prompt: must be >= 1");
  }

  if (j.contains("reward")) {
    const auto& rw = j["reward"];
    if (rw.contains("gamma_e")) cfg.reward.gamma_e = rw["gamma_e"].get<double>();
    if (rw.contains("gamma_a")) cfg.reward.gamma_a = rw["gamma_a"].get<double>();
    if (rw.contains("group_eps"))
      cfg.reward.group_eps = rw["group_eps"].get<double>();
    if (rw.contains("evidence_enabled"))
      cfg.reward.evidence_enabled = rw["evidence_enabled"].get<bool>();
    if (cfg.reward.gamma_e < 0) throw ConfigError("reward.gamma_e: must be >= 0");
    if (cfg.reward.gamma_a < 0) throw ConfigError("reward.gamma_a: must be >= 0");
    if (cfg.reward.group_eps <= 0)
      throw ConfigError("reward.group_eps: must be > 0");
  }

  // System template: a builtin name or an override file path.
  if (j.contains("template")) {
    std::string name = j["template"].get<std::string>();
    if (name == "default")
      cfg.rollout.system_template = templates::kSystemTemplate;
    else if (name == "no_evidence")
      cfg.rollout.system_template = templates::kSystemTemplateNoEvidence;
    else
      throw ConfigError("template: unknown builtin " + name);
  }
  if (j.contains("template_path"))
    cfg.rollout.system_template =
        detail::read_file(j["template_path"].get<std::string>());

  if (j.contains("workers")) cfg.workers = j["workers"].get<int>();
  if (cfg.workers < 1) throw ConfigError("workers: must be >= 1");
  if (j.contains("seed")) cfg.seed = j["seed"].get<long>();
  if (j.contains("kl_coefficient"))
    cfg.kl_coefficient = j["kl_coefficient"].get<double>();

  // Evidence scoring requires a cross-family model from a different family
  // than the policy; checked before any network use.
  if (cfg.cross_family && cfg.cross_family->family == cfg.policy.family)
    throw ConfigError(
        "cross_family.family: must differ from policy.family (\"" +
        cfg.policy.family + "\")");
  if (cfg.reward.evidence_enabled && !cfg.cross_family)
    throw ConfigError("cross_family: required when reward.evidence_enabled");
  return cfg;
}

inline EngineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path + ": " + e.what());
  }
  return parse_config(j);
}

inline std::unique_ptr<backends::GenerationBackend> make_backend(
    const BackendSpec& spec) {
  if (spec.script_path) {
    std::ifstream in(*spec.script_path);
    if (!in) throw ConfigError("cannot read script: " + *spec.script_path);
    return std::make_unique<backends::ScriptedBackend>(
        backends::ScriptedBackend::from_jsonl(in, spec.family));
  }
  backends::ChatBackendConfig bc;
  bc.base_url = *spec.base_url;
  bc.model = spec.model;
  bc.family = spec.family;
  return std::make_unique<backends::ChatCompletionsBackend>(bc);
}

inline std::unique_ptr<rollout::Retriever> make_retriever(
    const RetrieverSpec& spec) {
  if (spec.corpus_path) {
    std::ifstream in(*spec.corpus_path);
    if (!in) throw ConfigError("cannot read corpus: " + *spec.corpus_path);
    auto records = retrieval::load_index_or_corpus(in);
    return std::make_unique<rollout::LocalRetriever>(
        retrieval::Bm25Index::build(records));
  }
  return std::make_unique<rollout::RemoteRetriever>(*spec.endpoint);
}

}  // namespace rsearch::config
