#include <cstdio>
#include <fstream>
#include <future>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rsearch/config.hpp"
#include "rsearch/episode_io.hpp"
#include "rsearch/eval.hpp"
#include "rsearch/protocol.hpp"
#include "rsearch/retrieval.hpp"
#include "rsearch/rollout.hpp"
#include "rsearch/rstool.hpp"

namespace {

using namespace rsearch;

std::string dataset_name_from_path(const std::string& path) {
  std::size_t slash = path.find_last_of("/\\");
  std::string base = slash == std::string::npos ? path : path.substr(slash + 1);
  std::size_t dot = base.find_last_of('.');
  return dot == std::string::npos ? base : base.substr(0, dot);
}

int cmd_index(const std::string& corpus_path, const std::string& index_path) {
  std::ifstream in(corpus_path);
  if (!in) {
    std::cerr << "error: cannot read corpus: " << corpus_path << "\n";
    return 1;
  }
  auto records = retrieval::load_corpus_jsonl(in);
  retrieval::Bm25Index::build(records);  // surfaces empty/duplicate errors
  std::ofstream out(index_path, std::ios::binary);
  if (!out) {
    std::cerr << "error: cannot write index: " << index_path << "\n";
    return 1;
  }
  retrieval::save_index(out, records);
  std::cout << "indexed " << records.size() << " documents -> " << index_path
            << "\n";
  return 0;
}

int cmd_rollout(const config::EngineConfig& cfg, const std::string& dataset_path,
                const std::string& out_path) {
  std::ifstream din(dataset_path);
  if (!din) {
    std::cerr << "error: cannot read dataset: " << dataset_path << "\n";
    return 1;
  }
  auto records = eval::load_dataset(din);

  auto policy = config::make_backend(cfg.policy);
  std::unique_ptr<backends::GenerationBackend> cross;
  if (cfg.cross_family) cross = config::make_backend(*cfg.cross_family);
  auto retriever = config::make_retriever(cfg.retriever);

  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    std::cerr << "error: cannot write episodes: " << out_path << "\n";
    return 1;
  }

  auto run_record = [&](const eval::DatasetRecord& rec) {
    return rollout::run_group(rec.id, rec.question, rec.golden_answers,
                              *policy, *retriever, cfg.rollout, cfg.reward,
                              cross.get());
  };

  double reward_sum = 0.0;
  double valid_sum = 0.0;
  std::size_t n_episodes = 0;
  std::size_t next = 0;
  while (next < records.size()) {
    // Bounded batch of concurrent records; output stays in input order.
    std::size_t batch = std::min<std::size_t>(cfg.workers,
                                              records.size() - next);
    std::vector<std::future<std::vector<rollout::Episode>>> futures;
    for (std::size_t i = 0; i < batch; ++i)
      futures.push_back(std::async(batch > 1 ? std::launch::async
                                             : std::launch::deferred,
                                   run_record, records[next + i]));
    for (auto& fut : futures) {
      auto episodes = fut.get();
      for (const auto& ep : episodes) {
        reward_sum += ep.reward.total;
        valid_sum += static_cast<double>(ep.stats.valid_searches);
        ++n_episodes;
      }
      episode_io::write_jsonl(out, episodes);
      out.flush();  // partial output survives an abort
    }
    next += batch;
  }
  if (n_episodes > 0) {
    std::cout << "episodes: " << n_episodes
              << "  mean reward: " << reward_sum / n_episodes
              << "  mean valid searches: " << valid_sum / n_episodes << "\n";
  } else {
    std::cout << "episodes: 0\n";
  }
  return 0;
}

int cmd_score(const rewards::RewardConfig& reward_cfg,
              const std::string& episodes_path, const std::string& out_path) {
  std::ifstream in(episodes_path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot read episodes: " << episodes_path << "\n";
    return 1;
  }
  auto episodes = episode_io::read_jsonl(in);
  in.close();

  for (auto& ep : episodes) {
    if (ep.stats.terminated_by == rollout::Termination::BackendError) continue;
    ep.reward.answer = rewards::answer_reward(ep.trajectory, ep.golden_answers);
    if (reward_cfg.evidence_enabled && ep.reward.cross_model_answer &&
        protocol::extract_evidence(ep.trajectory)) {
      ep.reward.evidence = rewards::max_f1_over_golds(
          *ep.reward.cross_model_answer, ep.golden_answers);
    } else {
      ep.reward.evidence = 0.0;
      if (!reward_cfg.evidence_enabled) ep.reward.cross_model_answer.reset();
    }
    ep.reward.format = rewards::format_reward(
        protocol::format_flags(ep.trajectory), reward_cfg);
    ep.reward.total = ep.reward.answer + ep.reward.evidence + ep.reward.format;
    ep.mask = masking::compute_loss_mask(ep.trajectory);
  }

  std::string tmp = out_path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) {
      std::cerr << "error: cannot write " << tmp << "\n";
      return 1;
    }
    episode_io::write_jsonl(out, episodes);
  }
  std::remove(out_path.c_str());
  if (std::rename(tmp.c_str(), out_path.c_str()) != 0) {
    std::cerr << "error: cannot replace " << out_path << "\n";
    return 1;
  }
  std::cout << "rescored " << episodes.size() << " episodes\n";
  return 0;
}

int cmd_evaluate(const std::string& episodes_path,
                 const std::vector<std::string>& dataset_paths,
                 const std::string& report_path) {
  std::ifstream ein(episodes_path, std::ios::binary);
  if (!ein) {
    std::cerr << "error: cannot read episodes: " << episodes_path << "\n";
    return 1;
  }
  auto episodes = episode_io::read_jsonl(ein);
  std::unordered_map<std::string, std::optional<std::string>> answers;
  for (const auto& ep : episodes) {
    std::string key = ep.id;
    // Group samples carry "<record>#<k>"; the first sample represents the
    // record at evaluation time.
    std::size_t hash = key.rfind('#');
    if (hash != std::string::npos) {
      if (key.substr(hash + 1) != "0") continue;
      key = key.substr(0, hash);
    }
    answers[key] = protocol::extract_answer(ep.trajectory);
  }

  std::map<std::string, eval::DatasetMetrics> per_dataset;
  for (const auto& path : dataset_paths) {
    std::ifstream din(path);
    if (!din) {
      std::cerr << "error: cannot read dataset: " << path << "\n";
      return 1;
    }
    auto records = eval::load_dataset(din);
    per_dataset[dataset_name_from_path(path)] =
        eval::evaluate(records, answers);
  }
  auto report = eval::assemble_report(per_dataset);

  std::printf("%-20s %8s %8s %6s\n", "dataset", "EM", "F1", "n");
  for (const auto& [name, m] : report.per_dataset)
    std::printf("%-20s %8.2f %8.2f %6zu\n", name.c_str(), m.em, m.f1, m.n);
  if (report.multi_hop_avg)
    std::printf("%-20s %17.2f\n", "multi-hop avg", *report.multi_hop_avg);
  if (report.single_hop_avg)
    std::printf("%-20s %17.2f\n", "single-hop avg", *report.single_hop_avg);
  std::printf("%-20s %17.2f\n", "overall avg", report.overall_avg);

  if (!report_path.empty()) {
    std::ofstream rout(report_path, std::ios::binary);
    if (!rout) {
      std::cerr << "error: cannot write report: " << report_path << "\n";
      return 1;
    }
    rout << eval::report_to_json(report).dump(2) << "\n";
  }
  return 0;
}

int cmd_export_evidence(const std::string& episodes_path,
                        const std::string& out_path,
                        const std::string& policy_family) {
  std::ifstream in(episodes_path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot read episodes: " << episodes_path << "\n";
    return 1;
  }
  auto episodes = episode_io::read_jsonl(in);
  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    std::cerr << "error: cannot write " << out_path << "\n";
    return 1;
  }
  std::size_t exported = 0;
  for (const auto& ep : episodes) {
    auto record = rstool::export_evidence(ep.trajectory, ep.id, policy_family);
    if (!record) continue;
    out << nlohmann::json{{"question", record->question},
                          {"evidence", record->evidence},
                          {"source_episode", record->source_episode},
                          {"policy_family", record->policy_family}}
               .dump()
        << "\n";
    ++exported;
  }
  std::cout << "exported " << exported << " evidence records\n";
  return 0;
}

int cmd_answer(const config::EngineConfig& cfg, const std::string& evidence_path,
               const std::string& out_path) {
  const config::BackendSpec* spec = nullptr;
  if (cfg.downstream)
    spec = &*cfg.downstream;
  else if (cfg.cross_family)
    spec = &*cfg.cross_family;
  if (spec == nullptr) {
    std::cerr << "error: config needs a downstream (or cross_family) backend\n";
    return 1;
  }
  auto backend = config::make_backend(*spec);

  std::ifstream in(evidence_path, std::ios::binary);
  if (!in) {
    std::cerr << "error: cannot read evidence: " << evidence_path << "\n";
    return 1;
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    std::cerr << "error: cannot write " << out_path << "\n";
    return 1;
  }

  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      std::cerr << "error: evidence line " << line_no << ": " << e.what()
                << "\n";
      return 1;
    }
    rstool::EvidenceRecord record{
        j.at("question").get<std::string>(),
        j.at("evidence").get<std::string>(),
        j.value("source_episode", std::string()),
        j.value("policy_family", std::string()),
    };
    std::string answer = rstool::answer_with_evidence(record, *backend);
    out << nlohmann::json{{"source_episode", record.source_episode},
                          {"question", record.question},
                          {"answer", answer}}
               .dump()
        << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reasoning-search trajectory engine"};
  app.require_subcommand(1);

  std::string config_path;
  int workers_override = 0;
  long seed_override = 0;
  bool seed_set = false;
  app.add_option("--config", config_path, "Engine config file (JSON)");
  app.add_option("--workers", workers_override, "Concurrent episode workers");
  app.add_option("--seed", seed_override, "Sampling seed")
      ->each([&](const std::string&) { seed_set = true; });

  auto load_cfg = [&]() {
    auto cfg = config::load_config(config_path);
    if (workers_override > 0) cfg.workers = workers_override;
    if (seed_set) cfg.seed = seed_override;
    return cfg;
  };

  std::string corpus_path, index_path;
  auto* index = app.add_subcommand("index", "Build and persist a BM25 index");
  index->add_option("corpus", corpus_path, "Corpus JSONL")->required();
  index->add_option("out", index_path, "Index output path")->required();

  std::string dataset_path, episodes_path, out_path;
  auto* roll = app.add_subcommand("rollout", "Run episodes over a dataset");
  roll->add_option("dataset", dataset_path, "Dataset JSONL")->required();
  roll->add_option("out", out_path, "Episode output JSONL")->required();

  std::string score_out;
  auto* score = app.add_subcommand("score", "Re-score stored episodes");
  score->add_option("episodes", episodes_path, "Episode JSONL")->required();
  score->add_option("--out", score_out, "Output path (default: in place)");

  std::vector<std::string> eval_datasets;
  std::string report_path;
  auto* evaluate = app.add_subcommand("evaluate", "EM/F1 over stored episodes");
  evaluate->add_option("episodes", episodes_path, "Episode JSONL")->required();
  evaluate->add_option("datasets", eval_datasets, "Dataset JSONL files")
      ->required();
  evaluate->add_option("--report", report_path, "Machine-readable report path");

  std::string family = "policy";
  auto* exp = app.add_subcommand("export-evidence",
                                 "Export evidence boxes for downstream use");
  exp->add_option("episodes", episodes_path, "Episode JSONL")->required();
  exp->add_option("out", out_path, "Evidence output JSONL")->required();
  exp->add_option("--family", family, "Policy family label to record");

  std::string evidence_path;
  auto* answer = app.add_subcommand(
      "answer", "Answer questions from exported evidence records");
  answer->add_option("evidence", evidence_path, "Evidence JSONL")->required();
  answer->add_option("out", out_path, "Answer output JSONL")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (index->parsed()) return cmd_index(corpus_path, index_path);
    if (roll->parsed()) return cmd_rollout(load_cfg(), dataset_path, out_path);
    if (score->parsed()) {
      rewards::RewardConfig reward_cfg;
      if (!config_path.empty()) reward_cfg = load_cfg().reward;
      return cmd_score(reward_cfg, episodes_path,
                       score_out.empty() ? episodes_path : score_out);
    }
    if (evaluate->parsed())
      return cmd_evaluate(episodes_path, eval_datasets, report_path);
    if (exp->parsed()) {
      if (!config_path.empty()) family = load_cfg().policy.family;
      return cmd_export_evidence(episodes_path, out_path, family);
    }
    if (answer->parsed()) return cmd_answer(load_cfg(), evidence_path, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
