#pragma once

// Finite-difference check of the loss-through-model gradient, shared by the
// model tests and the acceptance run.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "distgate/loss.hpp"
#include "distgate/model.hpp"
#include "distgate/rng.hpp"

namespace gradcheck {

using namespace distgate;

struct Problem {
  BasicSegmenterParams<double> params;  // float-representable values
  FeatureMap<double> input;
  std::vector<std::uint8_t> labels;
  std::vector<float> g_prox;
  std::vector<float> g_dist;
};

struct Result {
  double max_rel_error_f32 = 0.0;
  double max_rel_error_f64 = 0.0;
  std::size_t checked = 0;
  std::size_t skipped_kinks = 0;  // parameters whose perturbation flipped a ReLU
};

inline Problem make_problem(const SegmenterConfig& config, const Dims& dims, std::uint64_t seed) {
  Rng rng(seed);
  auto p = init_params(config);
  // Non-zero biases so that bias paths are exercised.
  p.for_each_tensor([&](const std::string& name, std::span<float> t) {
    if (name.ends_with("bias")) {
      for (auto& v : t) v = static_cast<float>(rng.uniform(-0.2, 0.2));
    }
  });
  Problem pr;
  pr.params = convert_params<double>(p);
  pr.input = FeatureMap<double>(dims, config.in_channels);
  for (auto& v : pr.input.data) v = static_cast<double>(static_cast<float>(rng.normal()));
  const std::size_t n = pr.input.voxels();
  pr.labels.resize(n);
  pr.g_prox.resize(n);
  pr.g_dist.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    pr.labels[i] = rng.below(3) == 0 ? 1 : 0;
    pr.g_prox[i] = static_cast<float>(rng.uniform());
    pr.g_dist[i] = 1.0f - pr.g_prox[i];
  }
  return pr;
}

template <class Real>
GatedLossView<Real> view_of(const Problem& pr, const ForwardState<Real>& s) {
  return {{std::span<const Real>(s.probs[0]), std::span<const Real>(s.probs[1])},
          pr.labels,
          {std::span<const float>(pr.g_prox), std::span<const float>(pr.g_dist)}};
}

template <class Real>
BasicSegmenterParams<Real> analytic(const Problem& pr) {
  const auto params = convert_params<Real>(pr.params);
  FeatureMap<Real> in(pr.input.dims, pr.input.channels);
  std::copy(pr.input.data.begin(), pr.input.data.end(), in.data.begin());
  const auto s = forward_state(params, std::move(in));
  std::array<std::vector<Real>, 2> g{std::vector<Real>(s.probs[0].size()), std::vector<Real>(s.probs[1].size())};
  gated_nll_grad(view_of(pr, s), {std::span<Real>(g[0]), std::span<Real>(g[1])});
  return backward(params, s, {std::span<const Real>(g[0]), std::span<const Real>(g[1])});
}

struct Evaluation {
  std::vector<double> terms;          // per-voxel gated NLL, before the 1/N
  std::vector<std::uint8_t> pattern;  // ReLU on/off for every trunk activation
};

// -log p(y | z) for the logistic link, evaluated from the logit to avoid
// cancellation in log(1 - p).
inline double nll_from_logit(double z, bool y) {
  const double t = y ? -z : z;
  return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
}

inline Evaluation evaluate(const BasicSegmenterParams<double>& params, const Problem& pr) {
  const auto s = forward_state(params, pr.input);
  Evaluation e;
  e.terms.resize(pr.labels.size());
  for (std::size_t i = 0; i < pr.labels.size(); ++i) {
    const bool y = pr.labels[i] != 0;
    e.terms[i] = pr.g_prox[i] * nll_from_logit(s.logits[0][i], y) + pr.g_dist[i] * nll_from_logit(s.logits[1][i], y);
  }
  for (std::size_t l = 1; l < s.activations.size(); ++l) {
    for (double v : s.activations[l].data) e.pattern.push_back(v > 0.0 ? 1 : 0);
  }
  return e;
}

inline std::vector<std::span<double>> tensors(BasicSegmenterParams<double>& p) {
  std::vector<std::span<double>> out;
  p.for_each_tensor([&](const std::string&, std::span<double> t) { out.push_back(t); });
  return out;
}

template <class Real>
std::vector<double> flatten(const BasicSegmenterParams<Real>& p) {
  std::vector<double> out;
  p.for_each_tensor([&](const std::string&, std::span<const Real> t) { out.insert(out.end(), t.begin(), t.end()); });
  return out;
}

/// Central differences in double with step h against the float and double
/// analytic gradients. The relative error of a parameter is
/// |a - n| / max(|a|, |n|, floor * max_k |n_k|); perturbations that switch a
/// ReLU on or off are excluded because the loss is not differentiable there.
inline Result check(const Problem& pr, double h = 1e-5, double floor = 1e-6) {
  const auto a32 = flatten(analytic<float>(pr));
  const auto a64 = flatten(analytic<double>(pr));
  auto params = pr.params;
  const auto base_pattern = evaluate(params, pr).pattern;

  std::vector<double> numeric;
  std::vector<bool> usable;
  for (auto t : tensors(params)) {
    for (auto& v : t) {
      const double orig = v;
      v = orig + h;
      const auto plus = evaluate(params, pr);
      v = orig - h;
      const auto minus = evaluate(params, pr);
      v = orig;
      // Same central difference, summed voxel by voxel to limit cancellation.
      double diff = 0.0;
      for (std::size_t k = 0; k < plus.terms.size(); ++k) diff += plus.terms[k] - minus.terms[k];
      numeric.push_back(diff / (2.0 * h * static_cast<double>(plus.terms.size())));
      usable.push_back(plus.pattern == base_pattern && minus.pattern == base_pattern);
    }
  }

  double scale = 0.0;
  for (double n : numeric) scale = std::max(scale, std::abs(n));
  const double denom_floor = std::max(floor * scale, 1e-300);

  Result r;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    if (!usable[i]) {
      ++r.skipped_kinks;
      continue;
    }
    ++r.checked;
    const double n = numeric[i];
    auto rel = [&](double a) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), denom_floor}); };
    r.max_rel_error_f32 = std::max(r.max_rel_error_f32, rel(a32[i]));
    r.max_rel_error_f64 = std::max(r.max_rel_error_f64, rel(a64[i]));
  }
  return r;
}

/// Configuration k of the fixed family of random problems.
struct RandomCase {
  SegmenterConfig config;
  Dims dims;
  std::uint64_t seed;
};

inline RandomCase random_case(int k) {
  Rng rng(0xc0ffee00ULL + static_cast<std::uint64_t>(k));
  RandomCase c;
  c.config.in_channels = 3;
  c.config.trunk.clear();
  const int layers = 1 + static_cast<int>(rng.below(3));
  for (int l = 0; l < layers; ++l) {
    c.config.trunk.push_back({1 + static_cast<int>(rng.below(5)), rng.below(4) == 0 ? 1 : 3});
  }
  c.config.seed = rng();
  c.dims = {4 + static_cast<int>(rng.below(4)), 4 + static_cast<int>(rng.below(4)), 3 + static_cast<int>(rng.below(4))};
  c.seed = rng();
  return c;
}

}  // namespace gradcheck
