#include "distgate/inference.hpp"

#include <algorithm>
#include <stdexcept>

#include "distgate/parallel.hpp"

namespace distgate {

std::vector<int> window_starts(int n, int window, int stride) {
  if (n < 1 || window < 1 || stride < 1) throw std::invalid_argument("window geometry must be positive");
  if (window >= n) return {0};
  std::vector<int> starts;
  for (int s = 0;; s += stride) {
    if (s + window >= n) {
      starts.push_back(n - window);
      break;
    }
    starts.push_back(s);
  }
  return starts;
}

BranchProbabilities sliding_window_branches(const SegmenterParams& params, const CaseRecord& record,
                                            const SlidingWindowOptions& options) {
  const auto& grid = record.grid();
  for (int a = 0; a < 3; ++a) {
    if (options.window[a] < options.stride[a]) throw std::invalid_argument("window must be >= stride on every axis");
  }

  Dims window{};
  std::array<std::vector<int>, 3> starts;
  for (int a = 0; a < 3; ++a) {
    window[a] = std::min(options.window[a], grid.dims[a]);
    starts[a] = window_starts(grid.dims[a], options.window[a], options.stride[a]);
  }

  std::vector<Index3> origins;
  for (int z : starts[2])
    for (int y : starts[1])
      for (int x : starts[0]) origins.push_back({x, y, z});

  std::vector<double> sum_prox(grid.voxel_count(), 0.0);
  std::vector<double> sum_dist(grid.voxel_count(), 0.0);
  std::vector<std::uint32_t> visits(grid.voxel_count(), 0);

  // Windows are evaluated in batches and accumulated in window order so the
  // result does not depend on the worker count.
  const std::size_t batch = static_cast<std::size_t>(std::max(1, thread_count()));
  for (std::size_t first = 0; first < origins.size(); first += batch) {
    const std::size_t count = std::min(batch, origins.size() - first);
    std::vector<ForwardState<float>> results(count);
    parallel_for(count, [&](std::size_t j) {
      const auto& o = origins[first + j];
      const Index3 center{o[0] + window[0] / 2, o[1] + window[1] / 2, o[2] + window[2] / 2};
      const auto ct = crop_subvolume(record.ct, center, window);
      const auto pet = crop_subvolume(record.pet, center, window);
      const auto dist = crop_subvolume(record.distance, center, window);
      results[j] = forward_state(params, network_input(ct, pet, dist));
    });
    for (std::size_t j = 0; j < count; ++j) {
      const auto& o = origins[first + j];
      const auto& probs = results[j].probs;
      std::size_t w = 0;
      for (int z = 0; z < window[2]; ++z)
        for (int y = 0; y < window[1]; ++y)
          for (int x = 0; x < window[0]; ++x, ++w) {
            const auto i = grid.index(o[0] + x, o[1] + y, o[2] + z);
            sum_prox[i] += probs[0][w];
            sum_dist[i] += probs[1][w];
            ++visits[i];
          }
    }
  }

  BranchProbabilities out{ScalarVolume(grid), ScalarVolume(grid)};
  for (std::size_t i = 0; i < visits.size(); ++i) {
    out.prox[i] = static_cast<float>(sum_prox[i] / visits[i]);
    out.dist[i] = static_cast<float>(sum_dist[i] / visits[i]);
  }
  return out;
}

ScalarVolume fuse(const BranchProbabilities& branches, const GatingWeights& weights) {
  const auto& grid = branches.prox.grid();
  if (branches.dist.grid() != grid || weights.prox.grid() != grid || weights.dist.grid() != grid) {
    throw std::invalid_argument("fusion inputs are not on one grid");
  }
  ScalarVolume out(grid);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double p = static_cast<double>(weights.prox[i]) * branches.prox[i] +
                     static_cast<double>(weights.dist[i]) * branches.dist[i];
    out[i] = static_cast<float>(p);
  }
  return out;
}

ScalarVolume sliding_window_predict(const SegmenterParams& params, const CaseRecord& record,
                                    const SlidingWindowOptions& options, const GatingParams& gating) {
  const auto branches = sliding_window_branches(params, record, options);
  return fuse(branches, apply_gate(record.distance, gating));
}

}  // namespace distgate
