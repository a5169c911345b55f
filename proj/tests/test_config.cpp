#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "rsearch/config.hpp"
#include "rsearch/templates.hpp"

using namespace rsearch;
using nlohmann::json;

namespace {

json minimal_config() {
  return json{
      {"policy", {{"family", "qwen"}, {"script", "policy.jsonl"}}},
      {"cross_family", {{"family", "llama"}, {"script", "cross.jsonl"}}},
      {"retriever", {{"corpus", "corpus.jsonl"}}},
  };
}

}  // namespace

TEST_CASE("minimal config parses with engine defaults") {
  auto cfg = config::parse_config(minimal_config());
  CHECK(cfg.policy.family == "qwen");
  CHECK(cfg.policy.script_path == "policy.jsonl");
  CHECK(!cfg.policy.base_url);
  REQUIRE(cfg.cross_family.has_value());
  CHECK(cfg.cross_family->family == "llama");
  CHECK(!cfg.downstream);
  CHECK(cfg.retriever.corpus_path == "corpus.jsonl");

  CHECK(cfg.rollout.top_k == 3);
  CHECK(cfg.rollout.max_search_rounds == 8);
  CHECK(cfg.rollout.max_total_bytes == 32768);
  CHECK(cfg.rollout.samples_per_prompt == 5);
  CHECK(cfg.rollout.temperature == 1.0);
  CHECK(cfg.rollout.system_template == templates::kSystemTemplate);
  CHECK(cfg.reward.gamma_e == 0.2);
  CHECK(cfg.reward.gamma_a == 0.2);
  CHECK(cfg.reward.group_eps == 1e-6);
  CHECK(cfg.reward.evidence_enabled);
  CHECK(cfg.workers == 1);
  CHECK(cfg.seed == 0);
  CHECK(!cfg.kl_coefficient);
}

TEST_CASE("overrides and pass-through fields parse") {
  auto j = minimal_config();
  j["rollout"] = {{"top_k", 5},
                  {"max_search_rounds", 4},
                  {"max_total_bytes", 1024},
                  {"samples_per_prompt", 1},
                  {"temperature", 0.5},
                  {"on_retrieval_error", "abort"},
                  {"on_backend_error", "propagate"}};
  j["reward"] = {{"gamma_e", 0.1}, {"gamma_a", 0.3}, {"group_eps", 1e-8}};
  j["workers"] = 4;
  j["seed"] = 7;
  j["kl_coefficient"] = 0.001;

  auto cfg = config::parse_config(j);
  CHECK(cfg.rollout.top_k == 5);
  CHECK(cfg.rollout.max_search_rounds == 4);
  CHECK(cfg.rollout.max_total_bytes == 1024);
  CHECK(cfg.rollout.samples_per_prompt == 1);
  CHECK(cfg.rollout.temperature == 0.5);
  CHECK(cfg.rollout.on_retrieval_error ==
        rollout::RetrievalErrorPolicy::Abort);
  CHECK(cfg.rollout.on_backend_error == rollout::BackendErrorPolicy::Propagate);
  CHECK(cfg.reward.gamma_e == 0.1);
  CHECK(cfg.reward.gamma_a == 0.3);
  CHECK(cfg.reward.group_eps == 1e-8);
  CHECK(cfg.workers == 4);
  CHECK(cfg.seed == 7);
  CHECK(cfg.kl_coefficient == 0.001);
}

TEST_CASE("backend specs need exactly one transport") {
  auto both = minimal_config();
  both["policy"]["base_url"] = "http://localhost:8000";
  CHECK_THROWS_WITH_AS(config::parse_config(both),
                       doctest::Contains("policy"), config::ConfigError);

  auto neither = minimal_config();
  neither["policy"].erase("script");
  CHECK_THROWS_AS(config::parse_config(neither), config::ConfigError);

  auto no_family = minimal_config();
  no_family["policy"].erase("family");
  CHECK_THROWS_WITH_AS(config::parse_config(no_family),
                       doctest::Contains("policy.family"),
                       config::ConfigError);
}

TEST_CASE("retriever needs exactly one of corpus or endpoint") {
  auto both = minimal_config();
  both["retriever"]["endpoint"] = "http://localhost:9000";
  CHECK_THROWS_WITH_AS(config::parse_config(both),
                       doctest::Contains("retriever"), config::ConfigError);

  auto neither = minimal_config();
  neither["retriever"].erase("corpus");
  CHECK_THROWS_AS(config::parse_config(neither), config::ConfigError);

  auto remote = minimal_config();
  remote["retriever"] = {{"endpoint", "http://localhost:9000"}};
  auto cfg = config::parse_config(remote);
  CHECK(cfg.retriever.endpoint == "http://localhost:9000");
}

TEST_CASE("evidence scoring requires a distinct cross-family backend") {
  auto collide = minimal_config();
  collide["cross_family"]["family"] = "qwen";
  CHECK_THROWS_WITH_AS(config::parse_config(collide),
                       doctest::Contains("qwen"), config::ConfigError);

  auto missing = minimal_config();
  missing.erase("cross_family");
  CHECK_THROWS_WITH_AS(config::parse_config(missing),
                       doctest::Contains("cross_family"),
                       config::ConfigError);

  // Disabling the evidence reward lifts the requirement.
  missing["reward"] = {{"evidence_enabled", false}};
  auto cfg = config::parse_config(missing);
  CHECK(!cfg.reward.evidence_enabled);
  CHECK(!cfg.cross_family);
}

TEST_CASE("system template selection") {
  auto j = minimal_config();
  j["template"] = "no_evidence";
  CHECK(config::parse_config(j).rollout.system_template ==
        templates::kSystemTemplateNoEvidence);

  j["template"] = "default";
  CHECK(config::parse_config(j).rollout.system_template ==
        templates::kSystemTemplate);

  j["template"] = "bogus";
  CHECK_THROWS_WITH_AS(config::parse_config(j), doctest::Contains("bogus"),
                       config::ConfigError);

  auto path = std::filesystem::temp_directory_path() / "rsearch_template.txt";
  {
    std::ofstream out(path);
    out << "custom template body";
  }
  auto with_file = minimal_config();
  with_file["template_path"] = path.string();
  CHECK(config::parse_config(with_file).rollout.system_template ==
        "custom template body");
  std::filesystem::remove(path);
}

TEST_CASE("invalid numeric settings are rejected") {
  auto j = minimal_config();
  j["rollout"] = {{"top_k", 0}};
  CHECK_THROWS_AS(config::parse_config(j), config::ConfigError);

  j = minimal_config();
  j["rollout"] = {{"samples_per_prompt", 0}};
  CHECK_THROWS_AS(config::parse_config(j), config::ConfigError);

  j = minimal_config();
  j["reward"] = {{"group_eps", 0.0}};
  CHECK_THROWS_AS(config::parse_config(j), config::ConfigError);

  j = minimal_config();
  j["workers"] = 0;
  CHECK_THROWS_AS(config::parse_config(j), config::ConfigError);
}

TEST_CASE("load_config reports unreadable or malformed files") {
  CHECK_THROWS_AS(config::load_config("/nonexistent/config.json"),
                  config::ConfigError);

  auto path = std::filesystem::temp_directory_path() / "rsearch_bad.json";
  {
    std::ofstream out(path);
    out << "{ not json";
  }
  CHECK_THROWS_AS(config::load_config(path.string()), config::ConfigError);
  std::filesystem::remove(path);
}

TEST_CASE("factories build working backends and retrievers") {
  config::BackendSpec spec;
  spec.family = "qwen";
  spec.script_path = std::string(FIXTURE_DIR) + "/policy_script.jsonl";
  auto backend = config::make_backend(spec);
  CHECK(backend->family() == "qwen");

  config::BackendSpec missing = spec;
  missing.script_path = "/nonexistent/script.jsonl";
  CHECK_THROWS_AS(config::make_backend(missing), config::ConfigError);

  config::RetrieverSpec rspec;
  rspec.corpus_path = std::string(FIXTURE_DIR) + "/corpus.jsonl";
  auto retriever = config::make_retriever(rspec);
  auto docs = retriever->retrieve("Who bought FleetBoston Financial?", 3);
  REQUIRE(!docs.empty());
  CHECK(docs[0].id == "d01");

  config::RetrieverSpec bad;
  bad.corpus_path = "/nonexistent/corpus.jsonl";
  CHECK_THROWS_AS(config::make_retriever(bad), config::ConfigError);
}
