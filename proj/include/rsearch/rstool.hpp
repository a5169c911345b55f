#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "rsearch/backends.hpp"
#include "rsearch/protocol.hpp"

namespace rsearch::rstool {

/// Portable evidence export: everything a downstream model needs to answer
/// without redoing the reasoning-search interaction.
struct EvidenceRecord {
  std::string question;
  std::string evidence;
  std::string source_episode;
  std::string policy_family;
};

/// Instantiates the downstream answering prompt over shared evidence. Single
/// source of truth: the evidence reward uses this same builder.
inline std::string build_evidence_prompt(const std::string& question,
                                         const std::string& evidence) {
  std::string prompt;
  prompt.reserve(200 + evidence.size() + question.size());
  prompt +=
      "Answer the question based on the given passages.\n"
      "Only give me the answer and do not output any other words.\n"
      "The following are given passages: ";
  prompt += evidence;
  prompt += "\nQuestion: ";
  prompt += question;
  prompt += "\nAnswer:";
  return prompt;
}

/// Record for the episode's evidence box, or nothing when the box is
/// absent, duplicated, or empty.
inline std::optional<EvidenceRecord> export_evidence(
    const protocol::Trajectory& trajectory, const std::string& source_episode,
    const std::string& policy_family) {
  auto evidence = protocol::extract_evidence(trajectory);
  if (!evidence || evidence->empty()) return std::nullopt;
  return EvidenceRecord{trajectory.question, std::move(*evidence),
                        source_episode, policy_family};
}

/// One downstream generation over the evidence prompt; the raw reply is the
/// answer (the template instructs the model to output nothing else).
inline std::string answer_with_evidence(const EvidenceRecord& record,
                                        backends::GenerationBackend& downstream,
                                        double temperature = 0.1) {
  if (record.evidence.empty())
    throw std::invalid_argument("answer_with_evidence: empty evidence");
  backends::GenerationRequest req;
  req.system_prompt = "";
  req.transcript = build_evidence_prompt(record.question, record.evidence);
  req.temperature = temperature;
  return downstream.generate(record.source_episode, req).text;
}

}  // namespace rsearch::rstool
