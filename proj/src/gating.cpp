#include "distgate/gating.hpp"

#include <cmath>
#include <stdexcept>

namespace distgate {

std::string to_string(GateKind kind) {
  switch (kind) {
    case GateKind::single: return "single";
    case GateKind::binary: return "binary";
    case GateKind::soft: return "soft";
  }
  return "?";
}

GateKind parse_gate_kind(const std::string& name) {
  if (name == "single") return GateKind::single;
  if (name == "binary" || name == "bg") return GateKind::binary;
  if (name == "soft" || name == "sg") return GateKind::soft;
  throw std::invalid_argument("unknown gating mode '" + name + "'");
}

void GatingParams::validate() const {
  switch (kind) {
    case GateKind::single: return;
    case GateKind::binary:
      if (!(d0_mm > 0.0) || !std::isfinite(d0_mm)) throw std::invalid_argument("binary gate needs d0 > 0");
      return;
    case GateKind::soft:
      if (!(d_prox_mm > 0.0)) throw std::invalid_argument("soft gate needs d_prox > 0");
      if (!(d_prox_mm < d_dist_mm) || !std::isfinite(d_dist_mm)) {
        throw std::invalid_argument("soft gate needs d_prox < d_dist");
      }
      return;
  }
}

double binary_gate_value(double distance_mm, double d0_mm) { return distance_mm <= d0_mm ? 1.0 : 0.0; }

double soft_gate_value(double distance_mm, double d_prox_mm, double d_dist_mm) {
  if (distance_mm <= d_prox_mm) return 1.0;
  if (distance_mm > d_dist_mm) return 0.0;
  return 1.0 - (distance_mm - d_prox_mm) / (d_dist_mm - d_prox_mm);
}

double gate_value(double distance_mm, const GatingParams& params) {
  switch (params.kind) {
    case GateKind::single: return 1.0;
    case GateKind::binary: return binary_gate_value(distance_mm, params.d0_mm);
    case GateKind::soft: return soft_gate_value(distance_mm, params.d_prox_mm, params.d_dist_mm);
  }
  return 1.0;
}

namespace {

// Stores the larger weight rounded to float and derives the smaller one as its
// complement. The larger lies in [0.5, 1], so 1 - larger is exact in float and
// the pair sums to exactly 1 in any precision.
void store_pair(double prox, float& out_prox, float& out_dist) {
  if (prox >= 0.5) {
    out_prox = static_cast<float>(prox);
    out_dist = 1.0f - out_prox;
  } else {
    out_dist = static_cast<float>(1.0 - prox);
    out_prox = 1.0f - out_dist;
  }
}

}  // namespace

GatingWeights apply_gate(const DistanceMap& distance, const GatingParams& params) {
  params.validate();
  GatingWeights w{ScalarVolume(distance.grid()), ScalarVolume(distance.grid()), params};
  for (std::size_t i = 0; i < distance.size(); ++i) {
    store_pair(gate_value(distance[i], params), w.prox[i], w.dist[i]);
  }
  return w;
}

GatingWeights binary_gate(const DistanceMap& distance, double d0_mm) {
  return apply_gate(distance, GatingParams::binary(d0_mm));
}

GatingWeights soft_gate(const DistanceMap& distance, double d_prox_mm, double d_dist_mm) {
  return apply_gate(distance, GatingParams::soft(d_prox_mm, d_dist_mm));
}

GatingWeights single_gate(const VolumeGrid& grid) {
  return {ScalarVolume(grid, 1.0f), ScalarVolume(grid, 0.0f), GatingParams::single()};
}

}  // namespace distgate
