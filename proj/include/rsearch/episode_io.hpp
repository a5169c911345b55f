#pragma once

#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rsearch/rollout.hpp"

namespace rsearch::episode_io {

// Episode JSON-lines schema: one Episode per line, the trainer handoff.
// Byte ranges are [begin, end) pairs over the raw rollout text; trainers
// own tokenization and map spans onto token ids themselves.

namespace detail {

inline const char* kind_name(protocol::SegmentKind kind) {
  switch (kind) {
    case protocol::SegmentKind::Reasoning: return "reasoning";
    case protocol::SegmentKind::SearchQuery: return "search_query";
    case protocol::SegmentKind::Observation: return "observation";
    case protocol::SegmentKind::Evidence: return "evidence";
    case protocol::SegmentKind::Answer: return "answer";
  }
  return "reasoning";
}

inline protocol::SegmentKind kind_from(const std::string& name) {
  if (name == "reasoning") return protocol::SegmentKind::Reasoning;
  if (name == "search_query") return protocol::SegmentKind::SearchQuery;
  if (name == "observation") return protocol::SegmentKind::Observation;
  if (name == "evidence") return protocol::SegmentKind::Evidence;
  if (name == "answer") return protocol::SegmentKind::Answer;
  throw std::runtime_error("unknown segment kind: " + name);
}

inline const char* termination_name(rollout::Termination t) {
  switch (t) {
    case rollout::Termination::Answer: return "answer";
    case rollout::Termination::RoundLimit: return "round_limit";
    case rollout::Termination::ByteLimit: return "byte_limit";
    case rollout::Termination::BackendError: return "backend_error";
  }
  return "answer";
}

inline rollout::Termination termination_from(const std::string& name) {
  if (name == "answer") return rollout::Termination::Answer;
  if (name == "round_limit") return rollout::Termination::RoundLimit;
  if (name == "byte_limit") return rollout::Termination::ByteLimit;
  if (name == "backend_error") return rollout::Termination::BackendError;
  throw std::runtime_error("unknown termination: " + name);
}

}  // namespace detail

inline nlohmann::json to_json(const rollout::Episode& ep) {
  nlohmann::json segments = nlohmann::json::array();
  for (const auto& seg : ep.trajectory.segments) {
    segments.push_back({
        {"kind", detail::kind_name(seg.kind)},
        {"byte_range", {seg.range.begin, seg.range.end}},
        {"origin",
         seg.origin == protocol::Origin::Environment ? "environment" : "model"},
    });
  }
  nlohmann::json mask = nlohmann::json::array();
  for (const auto& span : ep.mask.spans) {
    mask.push_back({
        {"byte_range", {span.range.begin, span.range.end}},
        {"flag",
         span.flag == masking::MaskFlag::Exclude ? "exclude" : "optimize"},
    });
  }
  nlohmann::json rewards{
      {"answer", ep.reward.answer},
      {"evidence", ep.reward.evidence},
      {"format", ep.reward.format},
      {"total", ep.reward.total},
  };
  if (ep.reward.cross_model_answer)
    rewards["cross_model_answer"] = *ep.reward.cross_model_answer;

  nlohmann::json j{
      {"id", ep.id},
      {"question", ep.question},
      {"golden_answers", ep.golden_answers},
      {"raw", ep.trajectory.raw},
      {"segments", segments},
      {"rewards", rewards},
      {"mask", mask},
      {"stats",
       {{"search_rounds", ep.stats.search_rounds},
        {"valid_searches", ep.stats.valid_searches},
        {"total_bytes", ep.stats.total_bytes},
        {"terminated_by", detail::termination_name(ep.stats.terminated_by)}}},
  };
  if (ep.advantage) j["advantage"] = *ep.advantage;
  return j;
}

inline rollout::Episode from_json(const nlohmann::json& j) {
  rollout::Episode ep;
  ep.id = j.at("id").get<std::string>();
  ep.question = j.at("question").get<std::string>();
  ep.golden_answers = j.at("golden_answers").get<std::vector<std::string>>();
  ep.trajectory.question = ep.question;
  ep.trajectory.raw = j.at("raw").get<std::string>();
  for (const auto& s : j.at("segments")) {
    protocol::Segment seg;
    seg.kind = detail::kind_from(s.at("kind").get<std::string>());
    seg.range = {s.at("byte_range")[0].get<std::size_t>(),
                 s.at("byte_range")[1].get<std::size_t>()};
    seg.origin = s.at("origin").get<std::string>() == "environment"
                     ? protocol::Origin::Environment
                     : protocol::Origin::Model;
    if (seg.range.end > ep.trajectory.raw.size() ||
        seg.range.begin > seg.range.end)
      throw std::runtime_error("segment range out of bounds");
    std::size_t content_begin = seg.range.begin;
    std::size_t content_end = seg.range.end;
    if (seg.kind != protocol::SegmentKind::Reasoning) {
      // Recover content by stripping the fixed delimiters.
      for (const auto& tag : protocol::detail::kTags) {
        if (tag.kind != seg.kind) continue;
        content_begin += tag.open.size();
        content_end -= tag.close.size();
      }
    }
    seg.text = ep.trajectory.raw.substr(content_begin,
                                        content_end - content_begin);
    ep.trajectory.segments.push_back(std::move(seg));
  }
  const auto& r = j.at("rewards");
  ep.reward.answer = r.at("answer").get<double>();
  ep.reward.evidence = r.at("evidence").get<double>();
  ep.reward.format = r.at("format").get<double>();
  ep.reward.total = r.at("total").get<double>();
  if (r.contains("cross_model_answer"))
    ep.reward.cross_model_answer = r["cross_model_answer"].get<std::string>();
  for (const auto& m : j.at("mask")) {
    masking::MaskSpan span;
    span.range = {m.at("byte_range")[0].get<std::size_t>(),
                  m.at("byte_range")[1].get<std::size_t>()};
    span.flag = m.at("flag").get<std::string>() == "exclude"
                    ? masking::MaskFlag::Exclude
                    : masking::MaskFlag::Optimize;
    ep.mask.spans.push_back(span);
  }
  const auto& st = j.at("stats");
  ep.stats.search_rounds = st.at("search_rounds").get<std::size_t>();
  ep.stats.valid_searches = st.at("valid_searches").get<std::size_t>();
  ep.stats.total_bytes = st.at("total_bytes").get<std::size_t>();
  ep.stats.terminated_by =
      detail::termination_from(st.at("terminated_by").get<std::string>());
  if (j.contains("advantage")) ep.advantage = j["advantage"].get<double>();
  return ep;
}

inline void write_jsonl(std::ostream& out,
                        const std::vector<rollout::Episode>& episodes) {
  for (const auto& ep : episodes) out << to_json(ep).dump() << "\n";
}

inline std::vector<rollout::Episode> read_jsonl(std::istream& in) {
  std::vector<rollout::Episode> episodes;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      episodes.push_back(from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& e) {
      throw std::runtime_error("episodes line " + std::to_string(line_no) +
                               ": " + e.what());
    }
  }
  return episodes;
}

}  // namespace rsearch::episode_io
