#pragma once

#include <vector>

#include "distgate/gating.hpp"
#include "distgate/model.hpp"
#include "distgate/pipeline.hpp"

namespace distgate {

struct SlidingWindowOptions {
  Dims window{96, 96, 64};
  Dims stride{64, 64, 32};
};

/// Window start offsets along one axis: 0, stride, 2*stride, ... with the last
/// window shifted back to end at the volume edge. A window at least as large
/// as the axis yields the single start 0 (the window is clamped to n).
std::vector<int> window_starts(int n, int window, int stride);

/// Per-branch probabilities averaged over every window covering a voxel.
BranchProbabilities sliding_window_branches(const SegmenterParams& params, const CaseRecord& record,
                                            const SlidingWindowOptions& options);

/// P = G_prox * p_prox + G_dist * p_dist, evaluated in double and rounded
/// once, so the result stays inside [min p_m, max p_m].
ScalarVolume fuse(const BranchProbabilities& branches, const GatingWeights& weights);

/// Sliding-window prediction fused with gating computed once from the
/// case-level distance map.
ScalarVolume sliding_window_predict(const SegmenterParams& params, const CaseRecord& record,
                                    const SlidingWindowOptions& options, const GatingParams& gating);

}  // namespace distgate
