#pragma once

#include <algorithm>
#include <vector>

#include "rsearch/protocol.hpp"

namespace rsearch::masking {

enum class MaskFlag { Optimize, Exclude };

struct MaskSpan {
  protocol::ByteRange range;
  MaskFlag flag = MaskFlag::Optimize;

  friend bool operator==(const MaskSpan&, const MaskSpan&) = default;
};

/// Contiguous, non-overlapping spans jointly covering [0, len(raw)).
struct LossMask {
  std::vector<MaskSpan> spans;
};

/// Excludes environment-injected observation bytes (delimiters included)
/// from the optimization signal; everything model-authored, evidence
/// included, stays in. Adjacent same-flag spans are merged.
inline LossMask compute_loss_mask(const protocol::Trajectory& t) {
  std::vector<protocol::ByteRange> excluded;
  for (const auto& seg : t.segments) {
    if (seg.kind == protocol::SegmentKind::Observation &&
        seg.origin == protocol::Origin::Environment)
      excluded.push_back(seg.range);
  }
  std::sort(excluded.begin(), excluded.end(),
            [](const protocol::ByteRange& a, const protocol::ByteRange& b) {
              return a.begin < b.begin;
            });

  LossMask mask;
  auto push = [&mask](std::size_t begin, std::size_t end, MaskFlag flag) {
    if (begin >= end) return;
    if (!mask.spans.empty() && mask.spans.back().flag == flag &&
        mask.spans.back().range.end == begin) {
      mask.spans.back().range.end = end;
    } else {
      mask.spans.push_back({{begin, end}, flag});
    }
  };

  std::size_t cursor = 0;
  for (const auto& range : excluded) {
    push(cursor, range.begin, MaskFlag::Optimize);
    push(range.begin, range.end, MaskFlag::Exclude);
    cursor = range.end;
  }
  push(cursor, t.raw.size(), MaskFlag::Optimize);
  return mask;
}

}  // namespace rsearch::masking
