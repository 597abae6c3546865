#include "distgate/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "distgate/parallel.hpp"
#include "distgate/rng.hpp"

namespace distgate {

namespace fs = std::filesystem;
using nlohmann::json;

void SegmenterConfig::validate() const {
  if (in_channels < 1) throw std::invalid_argument("segmenter needs at least one input channel");
  if (trunk.empty()) throw std::invalid_argument("segmenter needs at least one trunk layer");
  for (const auto& l : trunk) {
    if (l.out_channels < 1) throw std::invalid_argument("trunk layer needs at least one channel");
    if (l.kernel < 1 || l.kernel % 2 == 0) throw std::invalid_argument("trunk kernel must be odd and positive");
  }
}

namespace {

template <class Real>
ConvLayer<Real> make_layer(int in, int out, int kernel) {
  ConvLayer<Real> l{in, out, kernel, {}, {}};
  l.weights.assign(static_cast<std::size_t>(in) * out * l.taps(), Real(0));
  l.bias.assign(static_cast<std::size_t>(out), Real(0));
  return l;
}

template <class Real>
BasicSegmenterParams<Real> empty_params(const SegmenterConfig& config) {
  config.validate();
  BasicSegmenterParams<Real> p;
  p.config = config;
  int channels = config.in_channels;
  for (const auto& spec : config.trunk) {
    p.trunk.push_back(make_layer<Real>(channels, spec.out_channels, spec.kernel));
    channels = spec.out_channels;
  }
  for (int m = 0; m < 2; ++m) p.heads[m] = make_layer<Real>(channels, 1, 1);
  return p;
}

template <class Real>
Real logistic(Real z) {
  const double d = static_cast<double>(z);
  if (d >= 0.0) return static_cast<Real>(1.0 / (1.0 + std::exp(-d)));
  const double e = std::exp(d);
  return static_cast<Real>(e / (1.0 + e));
}

struct AxisRange {
  int lo;
  int hi;
};

// Output positions o with o + offset inside [0, n).
AxisRange valid_range(int n, int offset) { return {std::max(0, -offset), std::min(n, n - offset)}; }

// out[oc] = bias[oc] + sum_ic sum_taps w * in[ic] shifted by tap offset.
// Output slices are independent, so z-parallelism does not change the result.
template <class Real>
void conv_forward(const ConvLayer<Real>& layer, const FeatureMap<Real>& in, FeatureMap<Real>& out) {
  const int nx = in.dims[0], ny = in.dims[1], nz = in.dims[2];
  const int k = layer.kernel, pad = k / 2;
  const auto slice = static_cast<std::size_t>(nx) * ny;
  parallel_for(static_cast<std::size_t>(nz), [&](std::size_t zi) {
    const int z = static_cast<int>(zi);
    for (int oc = 0; oc < layer.out_channels; ++oc) {
      Real* dst_slice = out.channel(oc).data() + slice * z;
      std::fill(dst_slice, dst_slice + slice, layer.bias[oc]);
      for (int ic = 0; ic < layer.in_channels; ++ic) {
        const Real* src_c = in.channel(ic).data();
        const Real* w = layer.weights.data() + (static_cast<std::size_t>(oc) * layer.in_channels + ic) * layer.taps();
        for (int kz = 0; kz < k; ++kz) {
          const int iz = z + kz - pad;
          if (iz < 0 || iz >= nz) continue;
          for (int ky = 0; ky < k; ++ky) {
            const int dy = ky - pad;
            const auto yr = valid_range(ny, dy);
            for (int kx = 0; kx < k; ++kx) {
              const int dx = kx - pad;
              const auto xr = valid_range(nx, dx);
              const Real wv = w[(kz * k + ky) * k + kx];
              for (int y = yr.lo; y < yr.hi; ++y) {
                Real* dst = dst_slice + static_cast<std::size_t>(y) * nx;
                const Real* src = src_c + slice * iz + static_cast<std::size_t>(y + dy) * nx + dx;
                for (int x = xr.lo; x < xr.hi; ++x) dst[x] += wv * src[x];
              }
            }
          }
        }
      }
    }
  });
}

// grad_in[ic] = sum_oc sum_taps w * grad_out[oc] shifted by -offset.
template <class Real>
void conv_backward_input(const ConvLayer<Real>& layer, const FeatureMap<Real>& grad_out, FeatureMap<Real>& grad_in) {
  const int nx = grad_out.dims[0], ny = grad_out.dims[1], nz = grad_out.dims[2];
  const int k = layer.kernel, pad = k / 2;
  const auto slice = static_cast<std::size_t>(nx) * ny;
  parallel_for(static_cast<std::size_t>(nz), [&](std::size_t zi) {
    const int z = static_cast<int>(zi);
    for (int ic = 0; ic < layer.in_channels; ++ic) {
      Real* dst_slice = grad_in.channel(ic).data() + slice * z;
      std::fill(dst_slice, dst_slice + slice, Real(0));
      for (int oc = 0; oc < layer.out_channels; ++oc) {
        const Real* src_c = grad_out.channel(oc).data();
        const Real* w = layer.weights.data() + (static_cast<std::size_t>(oc) * layer.in_channels + ic) * layer.taps();
        for (int kz = 0; kz < k; ++kz) {
          const int oz = z - (kz - pad);
          if (oz < 0 || oz >= nz) continue;
          for (int ky = 0; ky < k; ++ky) {
            const int dy = -(ky - pad);
            const auto yr = valid_range(ny, dy);
            for (int kx = 0; kx < k; ++kx) {
              const int dx = -(kx - pad);
              const auto xr = valid_range(nx, dx);
              const Real wv = w[(kz * k + ky) * k + kx];
              for (int y = yr.lo; y < yr.hi; ++y) {
                Real* dst = dst_slice + static_cast<std::size_t>(y) * nx;
                const Real* src = src_c + slice * oz + static_cast<std::size_t>(y + dy) * nx + dx;
                for (int x = xr.lo; x < xr.hi; ++x) dst[x] += wv * src[x];
              }
            }
          }
        }
      }
    }
  });
}

// Row dot product. Eight independent lanes in Real, combined in double; the
// fixed lane layout keeps the result reproducible.
template <class Real>
double dot(const Real* a, const Real* b, int n) {
  Real acc[8] = {};
  int i = 0;
  for (; i + 8 <= n; i += 8) {
    for (int l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  for (int l = 0; i < n; ++i, ++l) acc[l] += a[i] * b[i];
  double sum = 0.0;
  for (Real v : acc) sum += static_cast<double>(v);
  return sum;
}

// grad_w[oc][ic][tap] = sum_voxels grad_out[oc] * in[ic] shifted by tap offset.
// Each output channel owns its slice of the gradient.
template <class Real>
void conv_backward_weights(const ConvLayer<Real>& layer, const FeatureMap<Real>& in, const FeatureMap<Real>& grad_out,
                           ConvLayer<Real>& grad) {
  const int nx = in.dims[0], ny = in.dims[1], nz = in.dims[2];
  const int k = layer.kernel, pad = k / 2;
  const auto slice = static_cast<std::size_t>(nx) * ny;
  parallel_for(static_cast<std::size_t>(layer.out_channels), [&](std::size_t oci) {
    const int oc = static_cast<int>(oci);
    const Real* g_c = grad_out.channel(oc).data();
    double bias_acc = 0.0;
    for (std::size_t i = 0; i < grad_out.voxels(); ++i) bias_acc += static_cast<double>(g_c[i]);
    grad.bias[oc] = static_cast<Real>(bias_acc);

    for (int ic = 0; ic < layer.in_channels; ++ic) {
      const Real* in_c = in.channel(ic).data();
      Real* gw = grad.weights.data() + (static_cast<std::size_t>(oc) * layer.in_channels + ic) * layer.taps();
      for (int kz = 0; kz < k; ++kz) {
        const int dz = kz - pad;
        const auto zr = valid_range(nz, dz);
        for (int ky = 0; ky < k; ++ky) {
          const int dy = ky - pad;
          const auto yr = valid_range(ny, dy);
          for (int kx = 0; kx < k; ++kx) {
            const int dx = kx - pad;
            const auto xr = valid_range(nx, dx);
            double acc = 0.0;
            for (int z = zr.lo; z < zr.hi; ++z) {
              for (int y = yr.lo; y < yr.hi; ++y) {
                const Real* g = g_c + slice * z + static_cast<std::size_t>(y) * nx;
                const Real* s = in_c + slice * (z + dz) + static_cast<std::size_t>(y + dy) * nx + dx;
                acc += dot(g + xr.lo, s + xr.lo, xr.hi - xr.lo);
              }
            }
            gw[(kz * k + ky) * k + kx] = static_cast<Real>(acc);
          }
        }
      }
    }
  });
}

template <class Real>
void check_input(const BasicSegmenterParams<Real>& params, const FeatureMap<Real>& input) {
  if (input.channels != params.config.in_channels) {
    throw std::invalid_argument("segmenter expects " + std::to_string(params.config.in_channels) +
                                " input channels, got " + std::to_string(input.channels));
  }
  if (input.data.size() != input.voxels() * static_cast<std::size_t>(input.channels) || input.voxels() == 0) {
    throw std::invalid_argument("malformed feature map");
  }
}

}  // namespace

SegmenterParams init_params(const SegmenterConfig& config) {
  auto params = empty_params<float>(config);
  const Rng root(config.seed);
  std::uint64_t tag = 0;
  auto fill = [&](ConvLayer<float>& layer) {
    Rng rng = root.split(tag++);
    const double fan_in = static_cast<double>(layer.in_channels) * layer.taps();
    const double fan_out = static_cast<double>(layer.out_channels) * layer.taps();
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& w : layer.weights) w = static_cast<float>(rng.uniform(-a, a));
  };
  for (auto& l : params.trunk) fill(l);
  for (auto& h : params.heads) fill(h);
  return params;
}

template <class Real>
BasicSegmenterParams<Real> zeros_like(const BasicSegmenterParams<Real>& params) {
  return empty_params<Real>(params.config);
}

template <class Real>
ForwardState<Real> forward_state(const BasicSegmenterParams<Real>& params, FeatureMap<Real> input) {
  check_input(params, input);
  ForwardState<Real> state;
  state.activations.reserve(params.trunk.size() + 1);
  state.activations.push_back(std::move(input));
  for (const auto& layer : params.trunk) {
    const auto& in = state.activations.back();
    FeatureMap<Real> out(in.dims, layer.out_channels);
    conv_forward(layer, in, out);
    for (auto& v : out.data) v = std::max(v, Real(0));
    state.activations.push_back(std::move(out));
  }
  const auto& features = state.activations.back();
  for (int m = 0; m < 2; ++m) {
    FeatureMap<Real> logit(features.dims, 1);
    conv_forward(params.heads[m], features, logit);
    state.logits[m] = std::move(logit.data);
    state.probs[m].resize(state.logits[m].size());
    std::transform(state.logits[m].begin(), state.logits[m].end(), state.probs[m].begin(), logistic<Real>);
  }
  return state;
}

template <class Real>
BasicSegmenterParams<Real> backward(const BasicSegmenterParams<Real>& params, const ForwardState<Real>& state,
                                    std::array<std::span<const Real>, 2> grad_logits) {
  if (state.activations.size() != params.trunk.size() + 1) {
    throw std::invalid_argument("forward state does not match the parameter layout");
  }
  const auto& features = state.activations.back();
  for (int m = 0; m < 2; ++m) {
    if (grad_logits[m].size() != features.voxels()) throw std::invalid_argument("logit gradient has the wrong size");
  }

  auto grads = zeros_like(params);

  // Heads: both branches feed the shared trunk output.
  FeatureMap<Real> grad_features(features.dims, features.channels);
  FeatureMap<Real> head_contrib(features.dims, features.channels);
  for (int m = 0; m < 2; ++m) {
    FeatureMap<Real> g(features.dims, 1);
    std::copy(grad_logits[m].begin(), grad_logits[m].end(), g.data.begin());
    conv_backward_weights(params.heads[m], features, g, grads.heads[m]);
    conv_backward_input(params.heads[m], g, head_contrib);
    for (std::size_t i = 0; i < grad_features.data.size(); ++i) grad_features.data[i] += head_contrib.data[i];
  }

  for (std::size_t l = params.trunk.size(); l-- > 0;) {
    const auto& out = state.activations[l + 1];
    const auto& in = state.activations[l];
    for (std::size_t i = 0; i < grad_features.data.size(); ++i) {
      if (!(out.data[i] > Real(0))) grad_features.data[i] = Real(0);
    }
    conv_backward_weights(params.trunk[l], in, grad_features, grads.trunk[l]);
    if (l == 0) break;
    FeatureMap<Real> grad_in(in.dims, in.channels);
    conv_backward_input(params.trunk[l], grad_features, grad_in);
    grad_features = std::move(grad_in);
  }
  return grads;
}

FeatureMap<float> stack_channels(std::span<const ScalarVolume> channels) {
  if (channels.empty()) throw std::invalid_argument("no input channels");
  const auto& dims = channels.front().dims();
  FeatureMap<float> map(dims, static_cast<int>(channels.size()));
  for (std::size_t c = 0; c < channels.size(); ++c) {
    if (channels[c].dims() != dims) throw std::invalid_argument("input channels differ in shape");
    std::copy(channels[c].data().begin(), channels[c].data().end(), map.channel(static_cast<int>(c)).begin());
  }
  return map;
}

BranchProbabilities forward(const SegmenterParams& params, std::span<const ScalarVolume> channels) {
  auto state = forward_state(params, stack_channels(channels));
  const auto& grid = channels.front().grid();
  return {ScalarVolume(grid, std::move(state.probs[0])), ScalarVolume(grid, std::move(state.probs[1]))};
}

template <class Real>
void add_scaled(BasicSegmenterParams<Real>& dst, const BasicSegmenterParams<Real>& src, double scale) {
  std::vector<std::span<const Real>> sources;
  src.for_each_tensor([&](const std::string&, std::span<const Real> t) { sources.push_back(t); });
  std::size_t k = 0;
  dst.for_each_tensor([&](const std::string&, std::span<Real> t) {
    const auto s = sources.at(k++);
    if (s.size() != t.size()) throw std::invalid_argument("parameter layouts differ");
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(t[i] + scale * s[i]);
  });
}

void sgd_step(SegmenterParams& params, const SegmenterParams& grads, SegmenterParams& velocity, double lr,
              double momentum) {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");

  std::vector<std::span<const float>> g;
  grads.for_each_tensor([&](const std::string&, std::span<const float> t) { g.push_back(t); });
  for (const auto& t : g) {
    for (float v : t) {
      if (!std::isfinite(v)) throw std::runtime_error("non-finite gradient: training diverged");
    }
  }
  std::vector<std::span<float>> v;
  velocity.for_each_tensor([&](const std::string&, std::span<float> t) { v.push_back(t); });
  std::size_t k = 0;
  params.for_each_tensor([&](const std::string&, std::span<float> theta) {
    auto& vel = v.at(k);
    const auto& grad = g.at(k);
    ++k;
    if (vel.size() != theta.size() || grad.size() != theta.size()) throw std::invalid_argument("parameter layouts differ");
    for (std::size_t i = 0; i < theta.size(); ++i) {
      vel[i] = static_cast<float>(momentum * vel[i] + grad[i]);
      theta[i] = static_cast<float>(theta[i] - lr * vel[i]);
    }
  });
}

MomentumSgd::MomentumSgd(const SegmenterParams& params, double lr, double momentum)
    : velocity_(zeros_like(params)), lr_(lr), momentum_(momentum) {}

void MomentumSgd::step(SegmenterParams& params, const SegmenterParams& grads) {
  sgd_step(params, grads, velocity_, lr_, momentum_);
}

// --- checkpoints -------------------------------------------------------------

namespace {
fs::path with_ext(const fs::path& path, const char* ext) {
  auto stem = path;
  if (stem.extension() == ".json" || stem.extension() == ".raw") stem.replace_extension();
  return stem += ext;
}
}  // namespace

void save_checkpoint(const SegmenterParams& params, std::uint64_t step, const fs::path& path) {
  json trunk = json::array();
  for (const auto& l : params.config.trunk) trunk.push_back({{"out_channels", l.out_channels}, {"kernel", l.kernel}});
  json tensors = json::array();
  std::vector<unsigned char> payload;
  params.for_each_tensor([&](const std::string& name, std::span<const float> t) {
    tensors.push_back({{"name", name}, {"offset", payload.size() / 4}, {"count", t.size()}});
    for (float v : t) {
      const auto raw = std::bit_cast<std::uint32_t>(v);
      for (int b = 0; b < 4; ++b) payload.push_back(static_cast<unsigned char>((raw >> (8 * b)) & 0xffu));
    }
  });
  json manifest = {
      {"format", "distgate-checkpoint"}, {"version", 1},
      {"seed", params.config.seed},      {"step", step},
      {"in_channels", params.config.in_channels},
      {"trunk", trunk},                  {"dtype", "f32"},
      {"tensors", tensors},
  };
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream m(with_ext(path, ".json"));
  if (!m) throw std::runtime_error("cannot write checkpoint " + with_ext(path, ".json").string());
  m << manifest.dump(2) << '\n';
  std::ofstream raw(with_ext(path, ".raw"), std::ios::binary);
  raw.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!m || !raw) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream m(with_ext(path, ".json"));
  if (!m) throw std::runtime_error("checkpoint manifest not found: " + with_ext(path, ".json").string());
  json manifest;
  try {
    m >> manifest;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("invalid checkpoint manifest: ") + e.what());
  }

  SegmenterConfig config;
  Checkpoint ckpt;
  try {
    if (manifest.at("format") != "distgate-checkpoint") throw std::runtime_error("not a distgate checkpoint");
    config.seed = manifest.at("seed").get<std::uint64_t>();
    config.in_channels = manifest.at("in_channels").get<int>();
    config.trunk.clear();
    for (const auto& l : manifest.at("trunk")) {
      config.trunk.push_back({l.at("out_channels").get<int>(), l.at("kernel").get<int>()});
    }
    ckpt.step = manifest.at("step").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("invalid checkpoint manifest: ") + e.what());
  }
  ckpt.params = empty_params<float>(config);

  std::ifstream raw(with_ext(path, ".raw"), std::ios::binary);
  if (!raw) throw std::runtime_error("checkpoint payload not found: " + with_ext(path, ".raw").string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(raw)), std::istreambuf_iterator<char>());
  if (bytes.size() != ckpt.params.parameter_count() * 4) {
    throw std::runtime_error("checkpoint payload size does not match its manifest");
  }
  std::size_t offset = 0;
  ckpt.params.for_each_tensor([&](const std::string&, std::span<float> t) {
    for (auto& v : t) {
      std::uint32_t r = 0;
      for (int b = 3; b >= 0; --b) r = (r << 8) | bytes[offset + b];
      v = std::bit_cast<float>(r);
      offset += 4;
    }
  });
  return ckpt;
}

template BasicSegmenterParams<float> zeros_like(const BasicSegmenterParams<float>&);
template BasicSegmenterParams<double> zeros_like(const BasicSegmenterParams<double>&);
template ForwardState<float> forward_state(const BasicSegmenterParams<float>&, FeatureMap<float>);
template ForwardState<double> forward_state(const BasicSegmenterParams<double>&, FeatureMap<double>);
template BasicSegmenterParams<float> backward(const BasicSegmenterParams<float>&, const ForwardState<float>&,
                                              std::array<std::span<const float>, 2>);
template BasicSegmenterParams<double> backward(const BasicSegmenterParams<double>&, const ForwardState<double>&,
                                               std::array<std::span<const double>, 2>);
template void add_scaled(BasicSegmenterParams<float>&, const BasicSegmenterParams<float>&, double);
template void add_scaled(BasicSegmenterParams<double>&, const BasicSegmenterParams<double>&, double);

}  // namespace distgate
