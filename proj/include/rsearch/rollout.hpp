#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rsearch/backends.hpp"
#include "rsearch/masking.hpp"
#include "rsearch/protocol.hpp"
#include "rsearch/retrieval.hpp"
#include "rsearch/rewards.hpp"
#include "rsearch/templates.hpp"

namespace rsearch::rollout {

enum class RetrievalErrorPolicy { Abort, EmptyObservation };
enum class BackendErrorPolicy { Propagate, KeepEpisode };
enum class Termination { Answer, RoundLimit, ByteLimit, BackendError };

struct RolloutConfig {
  std::size_t top_k = 3;               // 3 training / 5 evaluation
  std::size_t max_search_rounds = 8;
  std::size_t max_total_bytes = 32768;
  std::size_t samples_per_prompt = 5;
  double temperature = 1.0;
  RetrievalErrorPolicy on_retrieval_error = RetrievalErrorPolicy::EmptyObservation;
  BackendErrorPolicy on_backend_error = BackendErrorPolicy::KeepEpisode;
  std::string system_template{templates::kSystemTemplate};
};

struct EpisodeStats {
  std::size_t search_rounds = 0;
  std::size_t valid_searches = 0;
  std::size_t total_bytes = 0;
  Termination terminated_by = Termination::Answer;
};

struct Episode {
  std::string id;
  std::string question;
  std::vector<std::string> golden_answers;
  protocol::Trajectory trajectory;
  rewards::RewardBreakdown reward;
  masking::LossMask mask;
  EpisodeStats stats;
  std::optional<double> advantage;
};

/// Search tool abstraction shared by the local index and the remote client.
class Retriever {
 public:
  virtual ~Retriever() = default;
  virtual std::vector<retrieval::Document> retrieve(const std::string& query,
                                                    std::size_t k) = 0;
};

class LocalRetriever : public Retriever {
 public:
  explicit LocalRetriever(retrieval::Bm25Index index)
      : index_(std::move(index)) {}

  std::vector<retrieval::Document> retrieve(const std::string& query,
                                            std::size_t k) override {
    return index_.search(query, k);
  }

  const retrieval::Bm25Index& index() const { return index_; }

 private:
  retrieval::Bm25Index index_;
};

class RemoteRetriever : public Retriever {
 public:
  explicit RemoteRetriever(std::string endpoint)
      : endpoint_(std::move(endpoint)) {}

  std::vector<retrieval::Document> retrieve(const std::string& query,
                                            std::size_t k) override {
    return retrieval::remote_retrieve(endpoint_, query, k);
  }

 private:
  std::string endpoint_;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

/// Runs the evidence-augmented iterative reasoning-search loop for one
/// question: generate with a </search> stop, inject retrieved observations,
/// repeat until an answer or a guard trips; then parse, mask, and score.
inline Episode run_episode(const std::string& episode_id,
                           const std::string& question,
                           const std::vector<std::string>& golds,
                           backends::GenerationBackend& policy,
                           Retriever& retriever, const RolloutConfig& cfg,
                           const rewards::RewardConfig& reward_cfg,
                           backends::GenerationBackend* cross_family) {
  Episode ep;
  ep.id = episode_id;
  ep.question = question;
  ep.golden_answers = golds;

  std::string rollout_text;
  std::vector<protocol::ByteRange> injected;
  EpisodeStats stats;
  bool backend_failed = false;

  for (;;) {
    if (rollout_text.size() >= cfg.max_total_bytes) {
      stats.terminated_by = Termination::ByteLimit;
      break;
    }
    backends::GenerationRequest req;
    req.system_prompt = cfg.system_template;
    req.transcript = "Question: " + question + "\n" + rollout_text;
    req.stop_sequences = {std::string(protocol::kSearchClose)};
    req.temperature = cfg.temperature;
    req.max_new_bytes = cfg.max_total_bytes - rollout_text.size();

    backends::GenerationResult result;
    try {
      result = policy.generate(episode_id, req);
    } catch (const backends::BackendError&) {
      if (cfg.on_backend_error == BackendErrorPolicy::Propagate) throw;
      stats.terminated_by = Termination::BackendError;
      backend_failed = true;
      break;
    }

    auto search = protocol::detect_completed_search(result.text);
    if (search && result.finished_by == backends::FinishReason::StopSequence) {
      auto& [query, end_offset] = *search;
      rollout_text.append(result.text, 0, end_offset);
      if (stats.search_rounds >= cfg.max_search_rounds) {
        stats.terminated_by = Termination::RoundLimit;
        break;
      }
      std::string trimmed = detail::trim(query);
      std::vector<retrieval::Document> docs;
      if (!trimmed.empty()) {
        try {
          docs = retriever.retrieve(trimmed, cfg.top_k);
        } catch (const retrieval::RetrievalError&) {
          if (cfg.on_retrieval_error == RetrievalErrorPolicy::Abort) throw;
          docs.clear();
        }
      }
      std::string observation = retrieval::render_observation(docs);
      rollout_text += "\n";
      std::size_t begin = rollout_text.size();
      rollout_text += observation;
      injected.push_back({begin, rollout_text.size()});
      rollout_text += "\n";
      ++stats.search_rounds;
      if (!trimmed.empty() && !docs.empty()) ++stats.valid_searches;
      continue;
    }

    rollout_text += result.text;
    if (result.finished_by == backends::FinishReason::LengthLimit &&
        rollout_text.size() >= cfg.max_total_bytes) {
      stats.terminated_by = Termination::ByteLimit;
    } else {
      stats.terminated_by = Termination::Answer;
    }
    break;
  }

  stats.total_bytes = rollout_text.size();
  ep.trajectory =
      protocol::parse_rollout(std::move(rollout_text), question, &injected);
  ep.mask = masking::compute_loss_mask(ep.trajectory);
  if (!backend_failed) {
    ep.reward = rewards::total_reward(ep.trajectory, golds, reward_cfg,
                                      cross_family, episode_id);
  }
  ep.stats = stats;
  return ep;
}

/// Samples cfg.samples_per_prompt independent episodes for one prompt and
/// attaches group-relative advantages over their total rewards. Episode ids
/// are "<id>#<sample>"; scripted fixtures key their entries the same way.
inline std::vector<Episode> run_group(
    const std::string& id, const std::string& question,
    const std::vector<std::string>& golds,
    backends::GenerationBackend& policy, Retriever& retriever,
    const RolloutConfig& cfg, const rewards::RewardConfig& reward_cfg,
    backends::GenerationBackend* cross_family) {
  std::vector<Episode> episodes;
  episodes.reserve(cfg.samples_per_prompt);
  for (std::size_t i = 0; i < cfg.samples_per_prompt; ++i) {
    episodes.push_back(run_episode(id + "#" + std::to_string(i), question,
                                   golds, policy, retriever, cfg, reward_cfg,
                                   cross_family));
  }
  std::vector<double> totals;
  totals.reserve(episodes.size());
  for (const auto& ep : episodes) totals.push_back(ep.reward.total);
  auto advantages = rewards::group_advantage(totals, reward_cfg);
  for (std::size_t i = 0; i < episodes.size(); ++i)
    episodes[i].advantage = advantages[i];
  return episodes;
}

}  // namespace rsearch::rollout
