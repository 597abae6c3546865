#include "distgate/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace distgate {

namespace {

template <class Real>
void check_view(const GatedLossView<Real>& v) {
  const auto n = v.labels.size();
  for (int m = 0; m < 2; ++m) {
    if (v.probs[m].size() != n || v.weights[m].size() != n) {
      throw std::invalid_argument("gated loss inputs differ in voxel count");
    }
  }
  if (n == 0) throw std::invalid_argument("gated loss over an empty volume");
}

}  // namespace

template <class Real>
double gated_nll(const GatedLossView<Real>& view) {
  check_view(view);
  const auto n = view.labels.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const bool y = view.labels[i] != 0;
    for (int m = 0; m < 2; ++m) {
      const double g = view.weights[m][i];
      if (g == 0.0) continue;
      const double p = std::clamp(static_cast<double>(view.probs[m][i]), kProbabilityEps, 1.0 - kProbabilityEps);
      total -= g * (y ? std::log(p) : std::log1p(-p));
    }
  }
  return total / static_cast<double>(n);
}

template <class Real>
void gated_nll_grad(const GatedLossView<Real>& view, std::array<std::span<Real>, 2> grad_logits) {
  check_view(view);
  const auto n = view.labels.size();
  for (int m = 0; m < 2; ++m) {
    if (grad_logits[m].size() != n) throw std::invalid_argument("gradient buffer has the wrong size");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double y = view.labels[i] ? 1.0 : 0.0;
    for (int m = 0; m < 2; ++m) {
      const double g = view.weights[m][i];
      grad_logits[m][i] = static_cast<Real>(g * (static_cast<double>(view.probs[m][i]) - y) * inv_n);
    }
  }
}

template double gated_nll<float>(const GatedLossView<float>&);
template double gated_nll<double>(const GatedLossView<double>&);
template void gated_nll_grad<float>(const GatedLossView<float>&, std::array<std::span<float>, 2>);
template void gated_nll_grad<double>(const GatedLossView<double>&, std::array<std::span<double>, 2>);

namespace {

GatedLossView<float> view_of(const GatedLossInput& in) {
  const auto& grid = in.labels.grid();
  if (in.probs[0].grid() != grid || in.probs[1].grid() != grid || in.weights.prox.grid() != grid ||
      in.weights.dist.grid() != grid) {
    throw std::invalid_argument("gated loss inputs are not on one grid");
  }
  return {{in.probs[0].data(), in.probs[1].data()}, in.labels.data(), {in.weights.prox.data(), in.weights.dist.data()}};
}

}  // namespace

double gated_nll(const GatedLossInput& input) { return gated_nll(view_of(input)); }

std::array<ScalarVolume, 2> gated_nll_grad(const GatedLossInput& input) {
  const auto view = view_of(input);
  std::array<ScalarVolume, 2> grads{ScalarVolume(input.labels.grid()), ScalarVolume(input.labels.grid())};
  gated_nll_grad(view, {grads[0].data(), grads[1].data()});
  return grads;
}

}  // namespace distgate
