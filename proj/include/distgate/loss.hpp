#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "distgate/gating.hpp"
#include "distgate/volume.hpp"

namespace distgate {

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kProbabilityEps = 1e-7;

inline constexpr int kProx = 0;
inline constexpr int kDist = 1;

/// Foreground probabilities of both branches, the label mask and the gating
/// weights, all on one grid.
struct GatedLossInput {
  std::array<ScalarVolume, 2> probs;  // [kProx], [kDist]
  BinaryMask labels;
  GatingWeights weights;
};

/// Flat view used by the training loop and by 64-bit gradient checks.
template <class Real>
struct GatedLossView {
  std::array<std::span<const Real>, 2> probs;
  std::span<const std::uint8_t> labels;
  std::array<std::span<const float>, 2> weights;
};

/// L = -(1/N) sum_i sum_m g_{m,i} [y_i log p_{m,i} + (1 - y_i) log(1 - p_{m,i})]
/// with N the voxel count. Sequential double accumulation.
template <class Real>
double gated_nll(const GatedLossView<Real>& view);

/// dL/dz_{m,i} = g_{m,i} (p_{m,i} - y_i) / N for logits z through the logistic link.
template <class Real>
void gated_nll_grad(const GatedLossView<Real>& view, std::array<std::span<Real>, 2> grad_logits);

/// Throws std::invalid_argument on grid mismatch.
double gated_nll(const GatedLossInput& input);
std::array<ScalarVolume, 2> gated_nll_grad(const GatedLossInput& input);

}  // namespace distgate
