#pragma once

#include <string>

#include "distgate/edt.hpp"
#include "distgate/volume.hpp"

namespace distgate {

/// `single` routes every voxel to the proximal branch; it is the ungated
/// single-network baseline and keeps the two-branch plumbing unchanged.
enum class GateKind { single, binary, soft };

std::string to_string(GateKind kind);
GateKind parse_gate_kind(const std::string& name);  // "single" | "binary"/"bg" | "soft"/"sg"

/// Gating thresholds, all in millimetres.
struct GatingParams {
  GateKind kind = GateKind::soft;
  double d0_mm = 70.0;      // binary threshold
  double d_prox_mm = 50.0;  // soft ramp start
  double d_dist_mm = 90.0;  // soft ramp end

  static GatingParams single() { return {GateKind::single}; }
  static GatingParams binary(double d0_mm) { return {GateKind::binary, d0_mm}; }
  static GatingParams soft(double d_prox_mm, double d_dist_mm) {
    return {GateKind::soft, 70.0, d_prox_mm, d_dist_mm};
  }

  /// Throws std::invalid_argument for d0 <= 0 or !(0 < d_prox < d_dist).
  void validate() const;

  friend bool operator==(const GatingParams&, const GatingParams&) = default;
};

/// Per-voxel branch weights. prox + dist == 1 exactly at every voxel.
struct GatingWeights {
  ScalarVolume prox;
  ScalarVolume dist;
  GatingParams params;
};

/// Proximal weight for one distance value.
double binary_gate_value(double distance_mm, double d0_mm);
double soft_gate_value(double distance_mm, double d_prox_mm, double d_dist_mm);
double gate_value(double distance_mm, const GatingParams& params);

/// G_prox = 1[D <= d0], G_dist = 1 - G_prox.
GatingWeights binary_gate(const DistanceMap& distance, double d0_mm);

/// Linear ramp from 1 at d_prox to 0 at d_dist, saturated outside.
GatingWeights soft_gate(const DistanceMap& distance, double d_prox_mm, double d_dist_mm);

/// All weight on the proximal branch.
GatingWeights single_gate(const VolumeGrid& grid);

GatingWeights apply_gate(const DistanceMap& distance, const GatingParams& params);

}  // namespace distgate
