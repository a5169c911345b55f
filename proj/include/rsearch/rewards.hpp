#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rsearch/backends.hpp"
#include "rsearch/protocol.hpp"
#include "rsearch/rstool.hpp"

namespace rsearch::rewards {

struct RewardConfig {
  double gamma_e = 0.2;
  double gamma_a = 0.2;
  double group_eps = 1e-6;
  bool evidence_enabled = true;  // ablation switch ("w/o Evidence" runs)
};

struct RewardBreakdown {
  double answer = 0.0;
  double evidence = 0.0;
  double format = 0.0;
  double total = 0.0;
  std::optional<std::string> cross_model_answer;
};

/// Standard QA answer normalization: lowercase, drop punctuation, drop the
/// articles a/an/the, split on whitespace.
inline std::vector<std::string> normalize_answer(const std::string& text) {
  std::string cleaned;
  cleaned.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(c)));
  }
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < cleaned.size()) {
    while (i < cleaned.size() &&
           std::isspace(static_cast<unsigned char>(cleaned[i])))
      ++i;
    std::size_t start = i;
    while (i < cleaned.size() &&
           !std::isspace(static_cast<unsigned char>(cleaned[i])))
      ++i;
    if (i > start) {
      std::string token = cleaned.substr(start, i - start);
      if (token != "a" && token != "an" && token != "the")
        tokens.push_back(std::move(token));
    }
  }
  return tokens;
}

/// Token-level F1 over normalized token multisets. 0 when either side
/// normalizes to empty.
inline double token_f1(const std::string& pred, const std::string& gold) {
  auto p = normalize_answer(pred);
  auto g = normalize_answer(gold);
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string, int> gold_counts;
  for (const auto& tok : g) ++gold_counts[tok];
  int overlap = 0;
  for (const auto& tok : p) {
    auto it = gold_counts.find(tok);
    if (it != gold_counts.end() && it->second > 0) {
      ++overlap;
      --it->second;
    }
  }
  if (overlap == 0) return 0.0;
  return 2.0 * overlap / static_cast<double>(p.size() + g.size());
}

inline int exact_match(const std::string& pred, const std::string& gold) {
  return normalize_answer(pred) == normalize_answer(gold) ? 1 : 0;
}

inline double max_f1_over_golds(const std::string& pred,
                                const std::vector<std::string>& golds) {
  double best = 0.0;
  for (const auto& gold : golds) best = std::max(best, token_f1(pred, gold));
  return best;
}

inline int max_em_over_golds(const std::string& pred,
                             const std::vector<std::string>& golds) {
  for (const auto& gold : golds)
    if (exact_match(pred, gold)) return 1;
  return 0;
}

/// Answer reward: F1 of the extracted answer box against the best gold;
/// 0 when the box is absent or duplicated.
inline double answer_reward(const protocol::Trajectory& t,
                            const std::vector<std::string>& golds) {
  auto answer = protocol::extract_answer(t);
  if (!answer) return 0.0;
  return max_f1_over_golds(*answer, golds);
}

/// Evidence reward: a frozen cross-family model answers from the shared
/// evidence; its reply is scored like an answer. Returns the reward and the
/// cross-model answer used. No well-formed evidence box -> (0, nothing).
inline std::pair<double, std::optional<std::string>> evidence_reward(
    const std::string& question, const protocol::Trajectory& t,
    const std::vector<std::string>& golds,
    backends::GenerationBackend& cross_family,
    const std::string& episode_id = "") {
  auto evidence = protocol::extract_evidence(t);
  if (!evidence) return {0.0, std::nullopt};
  backends::GenerationRequest req;
  req.transcript = rstool::build_evidence_prompt(question, *evidence);
  req.temperature = 0.1;
  std::string reply = cross_family.generate(episode_id, req).text;
  return {max_f1_over_golds(reply, golds), std::move(reply)};
}

/// Rule-based format reward:
/// (1-I_S)(ge + ga*I_A) + I_S(ge*I_E + ga*I_A).
inline double format_reward(const protocol::FormatFlags& flags,
                            const RewardConfig& cfg) {
  double s = flags.retrieval_triggered ? 1.0 : 0.0;
  double a = flags.answer_well_formed ? 1.0 : 0.0;
  double e = flags.evidence_well_formed ? 1.0 : 0.0;
  return (1.0 - s) * (cfg.gamma_e + cfg.gamma_a * a) +
         s * (cfg.gamma_e * e + cfg.gamma_a * a);
}

/// Overall reward r = r_answer + r_evidence + r_format. With evidence
/// scoring disabled the evidence component is identically zero and no
/// cross-family call is made.
inline RewardBreakdown total_reward(const protocol::Trajectory& t,
                                    const std::vector<std::string>& golds,
                                    const RewardConfig& cfg,
                                    backends::GenerationBackend* cross_family,
                                    const std::string& episode_id = "") {
  RewardBreakdown b;
  b.answer = answer_reward(t, golds);
  if (cfg.evidence_enabled && cross_family != nullptr) {
    auto [reward, reply] =
        evidence_reward(t.question, t, golds, *cross_family, episode_id);
    b.evidence = reward;
    b.cross_model_answer = std::move(reply);
  }
  b.format = format_reward(protocol::format_flags(t), cfg);
  b.total = b.answer + b.evidence + b.format;
  return b;
}

/// GRPO group-relative normalization: (r - mean) / max(std, eps), with
/// population std. Exported for external trainers.
inline std::vector<double> group_advantage(const std::vector<double>& rewards,
                                           const RewardConfig& cfg) {
  std::vector<double> out(rewards.size(), 0.0);
  if (rewards.empty()) return out;
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(rewards.size());
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= static_cast<double>(rewards.size());
  double denom = std::max(std::sqrt(var), cfg.group_eps);
  for (std::size_t i = 0; i < rewards.size(); ++i)
    out[i] = (rewards[i] - mean) / denom;
  return out;
}

}  // namespace rsearch::rewards
