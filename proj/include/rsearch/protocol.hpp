#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace rsearch::protocol {

// Tag surface forms are fixed byte strings; matching is exact and
// case-sensitive so byte offsets stay stable for masking.
inline constexpr std::string_view kSearchOpen = "<search>";
inline constexpr std::string_view kSearchClose = "</search>";
inline constexpr std::string_view kObservationOpen = "<observation>";
inline constexpr std::string_view kObservationClose = "</observation>";
inline constexpr std::string_view kEvidenceOpen = "<original_evidence>";
inline constexpr std::string_view kEvidenceClose = "</original_evidence>";
inline constexpr std::string_view kAnswerOpen = "<answer>";
inline constexpr std::string_view kAnswerClose = "</answer>";

enum class SegmentKind { Reasoning, SearchQuery, Observation, Evidence, Answer };
enum class Origin { Model, Environment };

/// Half-open [begin, end) range over the raw rollout bytes.
struct ByteRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return begin == end; }
  friend bool operator==(const ByteRange&, const ByteRange&) = default;
};

struct Segment {
  SegmentKind kind = SegmentKind::Reasoning;
  std::string text;  // content between delimiters for tagged kinds
  ByteRange range;   // covers delimiters too for tagged kinds
  Origin origin = Origin::Model;
};

struct Trajectory {
  std::string question;
  std::string raw;
  std::vector<Segment> segments;
};

// Indicator flags feeding the format reward: retrieval triggered,
// answer in exactly one box, evidence in exactly one box.
struct FormatFlags {
  bool retrieval_triggered = false;
  bool answer_well_formed = false;
  bool evidence_well_formed = false;

  friend bool operator==(const FormatFlags&, const FormatFlags&) = default;
};

namespace detail {

struct TagSpec {
  SegmentKind kind;
  std::string_view open;
  std::string_view close;
};

inline constexpr TagSpec kTags[] = {
    {SegmentKind::SearchQuery, kSearchOpen, kSearchClose},
    {SegmentKind::Observation, kObservationOpen, kObservationClose},
    {SegmentKind::Evidence, kEvidenceOpen, kEvidenceClose},
    {SegmentKind::Answer, kAnswerOpen, kAnswerClose},
};

}  // namespace detail

/// Parses raw rollout text into an ordered segment list. Total: malformed
/// or unclosed tags degrade to Reasoning, never to a failure. Content of a
/// box is opaque; any tags inside it are literal text.
///
/// `injected_observations`, when given, is the authoritative list of spans
/// the engine injected: an observation pair whose full range is not listed
/// there was forged by the model and is kept as Reasoning text.
inline Trajectory parse_rollout(
    std::string raw, std::string question,
    const std::vector<ByteRange>* injected_observations = nullptr) {
  Trajectory t;
  t.question = std::move(question);
  t.raw = std::move(raw);

  const std::string& s = t.raw;
  std::size_t pos = 0;           // scan cursor
  std::size_t reason_start = 0;  // start of pending reasoning run

  auto flush_reasoning = [&](std::size_t upto) {
    if (upto > reason_start) {
      Segment seg;
      seg.kind = SegmentKind::Reasoning;
      seg.text = s.substr(reason_start, upto - reason_start);
      seg.range = {reason_start, upto};
      seg.origin = Origin::Model;
      t.segments.push_back(std::move(seg));
    }
  };

  while (pos < s.size()) {
    // Earliest opening tag of any kind at or after pos.
    const detail::TagSpec* best = nullptr;
    std::size_t best_pos = std::string::npos;
    for (const auto& tag : detail::kTags) {
      std::size_t p = s.find(tag.open, pos);
      if (p < best_pos) {
        best_pos = p;
        best = &tag;
      }
    }
    if (best == nullptr) break;

    std::size_t content_start = best_pos + best->open.size();
    std::size_t close_pos = s.find(best->close, content_start);
    if (close_pos == std::string::npos) {
      // Unclosed opener: literal text, keep scanning after it.
      pos = content_start;
      continue;
    }
    std::size_t block_end = close_pos + best->close.size();

    if (best->kind == SegmentKind::Observation &&
        injected_observations != nullptr) {
      ByteRange block{best_pos, block_end};
      bool injected = false;
      for (const auto& r : *injected_observations) {
        if (r == block) {
          injected = true;
          break;
        }
      }
      if (!injected) {
        // Model-forged observation block stays model-authored text.
        pos = content_start;
        continue;
      }
    }

    flush_reasoning(best_pos);
    Segment seg;
    seg.kind = best->kind;
    seg.text = s.substr(content_start, close_pos - content_start);
    seg.range = {best_pos, block_end};
    seg.origin = best->kind == SegmentKind::Observation ? Origin::Environment
                                                        : Origin::Model;
    t.segments.push_back(std::move(seg));
    pos = block_end;
    reason_start = block_end;
  }

  flush_reasoning(s.size());
  return t;
}

/// First complete search pair in the generated suffix: (query, offset just
/// past the closing tag). Nothing when no complete pair exists.
inline std::optional<std::pair<std::string, std::size_t>>
detect_completed_search(std::string_view generated_suffix) {
  std::size_t open = generated_suffix.find(kSearchOpen);
  if (open == std::string_view::npos) return std::nullopt;
  std::size_t content = open + kSearchOpen.size();
  std::size_t close = generated_suffix.find(kSearchClose, content);
  if (close == std::string_view::npos) return std::nullopt;
  return std::make_pair(
      std::string(generated_suffix.substr(content, close - content)),
      close + kSearchClose.size());
}

inline std::size_t count_kind(const Trajectory& t, SegmentKind kind) {
  std::size_t n = 0;
  for (const auto& seg : t.segments)
    if (seg.kind == kind) ++n;
  return n;
}

inline FormatFlags format_flags(const Trajectory& t) {
  FormatFlags f;
  f.retrieval_triggered = count_kind(t, SegmentKind::Observation) >= 1;
  f.answer_well_formed = count_kind(t, SegmentKind::Answer) == 1;
  f.evidence_well_formed = count_kind(t, SegmentKind::Evidence) == 1;
  return f;
}

namespace detail {

inline std::optional<std::string> unique_content(const Trajectory& t,
                                                 SegmentKind kind) {
  const Segment* found = nullptr;
  for (const auto& seg : t.segments) {
    if (seg.kind != kind) continue;
    if (found != nullptr) return std::nullopt;  // duplicated box
    found = &seg;
  }
  if (found == nullptr) return std::nullopt;
  return found->text;
}

}  // namespace detail

inline std::optional<std::string> extract_answer(const Trajectory& t) {
  return detail::unique_content(t, SegmentKind::Answer);
}

inline std::optional<std::string> extract_evidence(const Trajectory& t) {
  return detail::unique_content(t, SegmentKind::Evidence);
}

inline std::vector<std::string> extract_queries(const Trajectory& t) {
  std::vector<std::string> queries;
  for (const auto& seg : t.segments)
    if (seg.kind == SegmentKind::SearchQuery) queries.push_back(seg.text);
  return queries;
}

}  // namespace rsearch::protocol
