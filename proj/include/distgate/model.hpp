#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "distgate/volume.hpp"

namespace distgate {

/// One trunk convolution: `kernel`^3 taps, zero "same" padding, ReLU.
struct LayerSpec {
  int out_channels = 8;
  int kernel = 3;
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Shared trunk followed by two 1x1x1 heads (proximal, distal), each producing
/// one logit channel.
struct SegmenterConfig {
  int in_channels = 3;  // CT, PET, tumor distance
  std::vector<LayerSpec> trunk{{8, 3}, {8, 3}};
  std::uint64_t seed = 0;

  void validate() const;
  friend bool operator==(const SegmenterConfig&, const SegmenterConfig&) = default;
};

template <class Real>
struct ConvLayer {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  std::vector<Real> weights;  // [out][in][kz][ky][kx]
  std::vector<Real> bias;     // [out]

  [[nodiscard]] int taps() const { return kernel * kernel * kernel; }
};

template <class Real>
struct BasicSegmenterParams {
  SegmenterConfig config;
  std::vector<ConvLayer<Real>> trunk;
  std::array<ConvLayer<Real>, 2> heads;  // [kProx], [kDist]

  /// Visits every weight and bias tensor in a fixed order with a stable name.
  template <class F>
  void for_each_tensor(F&& f) {
    for (std::size_t l = 0; l < trunk.size(); ++l) {
      f("trunk." + std::to_string(l) + ".weight", std::span<Real>(trunk[l].weights));
      f("trunk." + std::to_string(l) + ".bias", std::span<Real>(trunk[l].bias));
    }
    for (int m = 0; m < 2; ++m) {
      f("head." + std::to_string(m) + ".weight", std::span<Real>(heads[m].weights));
      f("head." + std::to_string(m) + ".bias", std::span<Real>(heads[m].bias));
    }
  }
  template <class F>
  void for_each_tensor(F&& f) const {
    for (std::size_t l = 0; l < trunk.size(); ++l) {
      f("trunk." + std::to_string(l) + ".weight", std::span<const Real>(trunk[l].weights));
      f("trunk." + std::to_string(l) + ".bias", std::span<const Real>(trunk[l].bias));
    }
    for (int m = 0; m < 2; ++m) {
      f("head." + std::to_string(m) + ".weight", std::span<const Real>(heads[m].weights));
      f("head." + std::to_string(m) + ".bias", std::span<const Real>(heads[m].bias));
    }
  }

  [[nodiscard]] std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const std::string&, std::span<const Real> t) { n += t.size(); });
    return n;
  }
};

using SegmenterParams = BasicSegmenterParams<float>;

/// Channel-major stack of volumes: data[c][z][y][x].
template <class Real>
struct FeatureMap {
  Dims dims{1, 1, 1};
  int channels = 0;
  std::vector<Real> data;

  FeatureMap() = default;
  FeatureMap(const Dims& d, int c) : dims(d), channels(c), data(voxels() * static_cast<std::size_t>(c), Real(0)) {}

  [[nodiscard]] std::size_t voxels() const {
    return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) * static_cast<std::size_t>(dims[2]);
  }
  std::span<Real> channel(int c) { return {data.data() + voxels() * static_cast<std::size_t>(c), voxels()}; }
  std::span<const Real> channel(int c) const {
    return {data.data() + voxels() * static_cast<std::size_t>(c), voxels()};
  }
};

/// Intermediate values kept for backpropagation.
template <class Real>
struct ForwardState {
  std::vector<FeatureMap<Real>> activations;  // [0] input, [l + 1] post-ReLU trunk layer l
  std::array<std::vector<Real>, 2> logits;
  std::array<std::vector<Real>, 2> probs;
};

/// Deterministic Glorot-uniform weights from config.seed; zero biases.
SegmenterParams init_params(const SegmenterConfig& config);

template <class Real>
BasicSegmenterParams<Real> zeros_like(const BasicSegmenterParams<Real>& params);

template <class To, class From>
BasicSegmenterParams<To> convert_params(const BasicSegmenterParams<From>& params) {
  BasicSegmenterParams<To> out;
  out.config = params.config;
  auto convert = [](const ConvLayer<From>& l) {
    ConvLayer<To> c{l.in_channels, l.out_channels, l.kernel, {}, {}};
    c.weights.assign(l.weights.begin(), l.weights.end());
    c.bias.assign(l.bias.begin(), l.bias.end());
    return c;
  };
  for (const auto& l : params.trunk) out.trunk.push_back(convert(l));
  for (int m = 0; m < 2; ++m) out.heads[m] = convert(params.heads[m]);
  return out;
}

/// Throws std::invalid_argument if `input` does not match the config.
template <class Real>
ForwardState<Real> forward_state(const BasicSegmenterParams<Real>& params, FeatureMap<Real> input);

/// Gradients of every parameter given dL/dlogit per branch. Contributions of
/// both heads are summed where they meet in the shared trunk.
template <class Real>
BasicSegmenterParams<Real> backward(const BasicSegmenterParams<Real>& params, const ForwardState<Real>& state,
                                    std::array<std::span<const Real>, 2> grad_logits);

struct BranchProbabilities {
  ScalarVolume prox;
  ScalarVolume dist;
};

/// Stacks equally-shaped volumes into a feature map.
FeatureMap<float> stack_channels(std::span<const ScalarVolume> channels);

/// Probabilities of both heads on the grid of the input channels.
BranchProbabilities forward(const SegmenterParams& params, std::span<const ScalarVolume> channels);

/// dst += scale * src, tensor by tensor.
template <class Real>
void add_scaled(BasicSegmenterParams<Real>& dst, const BasicSegmenterParams<Real>& src, double scale);

/// Classical momentum: v <- momentum * v + g; theta <- theta - lr * v.
/// Throws std::runtime_error on non-finite gradients (divergence).
void sgd_step(SegmenterParams& params, const SegmenterParams& grads, SegmenterParams& velocity, double lr,
              double momentum);

class MomentumSgd {
 public:
  MomentumSgd(const SegmenterParams& params, double lr, double momentum);
  void step(SegmenterParams& params, const SegmenterParams& grads);

 private:
  SegmenterParams velocity_;
  double lr_;
  double momentum_;
};

/// Checkpoint = `<name>.json` manifest (config, step, tensor table) +
/// `<name>.raw` little-endian float32 payload.
struct Checkpoint {
  SegmenterParams params;
  std::uint64_t step = 0;
};

void save_checkpoint(const SegmenterParams& params, std::uint64_t step, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace distgate
