#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "distgate/pipeline.hpp"

namespace distgate {

/// Knobs of the synthetic case generator. Distances and radii in mm;
/// intensities in arbitrary units on a zero background.
struct PhantomConfig {
  Dims dims{160, 160, 48};
  Vec3 spacing{1.0, 1.0, 2.5};

  // Primary tumor: ellipsoid near the volume center.
  Vec3 tumor_semi_axes_mm{16.0, 13.0, 20.0};
  double tumor_center_jitter_mm = 8.0;

  // Lymph nodes: spheres whose centers land in distance bands from the tumor.
  int n_nodes = 6;
  double proximal_fraction = 1.0 / 3.0;  // D <= proximal_max_mm
  double distal_fraction = 1.0 / 3.0;    // D >= distal_min_mm; the rest falls in between
  double proximal_max_mm = 50.0;
  double distal_min_mm = 90.0;
  double node_radius_min_mm = 3.0;
  double node_radius_max_mm = 8.0;
  double node_gap_mm = 3.0;

  // Benign look-alikes: node-shaped CT blobs without PET uptake and without a
  // label, placed beyond the proximal band. Far from the tumor only PET then
  // separates a target node from a benign one.
  int n_benign = 3;

  // CT: additive contrasts plus Gaussian noise.
  double ct_tumor = 0.6;
  double ct_node_min = 0.8;
  double ct_node_max = 1.2;
  double ct_noise = 0.5;

  // PET: hot tumor, hot nodes except a missed fraction, spurious hot spots.
  double pet_tumor = 2.0;
  double pet_node = 1.0;
  double pet_noise = 0.3;
  double pet_fn_rate = 0.1;
  int pet_hotspots = 1;
  double hotspot_radius_mm = 5.0;

  int max_attempts = 20000;

  void validate() const;
  [[nodiscard]] std::string to_json() const;
  /// Missing keys keep their defaults.
  static PhantomConfig from_json(const std::string& text);
};

enum class NodeBand { proximal, mixed, distal };
std::string to_string(NodeBand band);

struct PhantomNode {
  std::uint32_t label = 0;
  Index3 center{};
  double radius_mm = 0.0;
  NodeBand band = NodeBand::mixed;
  bool pet_visible = true;
};

struct PhantomCase {
  CaseRecord record;
  std::vector<PhantomNode> nodes;
  std::vector<PhantomNode> benign;  // label 0
  std::vector<Index3> hotspots;
};

/// Deterministic in (seed, config). Throws std::runtime_error when an object
/// cannot be placed within max_attempts.
PhantomCase generate_case(std::uint64_t seed, const PhantomConfig& config, const std::string& case_id = "case");

/// Case ids case_000, case_001, ...; case i is generated from an independent
/// stream of `seed`.
std::string phantom_case_id(int index);
PhantomCase generate_indexed_case(std::uint64_t seed, int index, const PhantomConfig& config);

/// Split of n_cases by split_counts with a seeded permutation.
DatasetManifest plan_dataset(std::uint64_t seed, int n_cases, const SplitFractions& fractions,
                             const PhantomConfig& config);

/// Generates every case of plan_dataset into `<out_dir>/<case_id>/` and writes
/// `<out_dir>/manifest.json`. Requires n_cases >= 3.
DatasetManifest generate_dataset(std::uint64_t seed, int n_cases, const SplitFractions& fractions,
                                 const PhantomConfig& config, const std::filesystem::path& out_dir);

}  // namespace distgate
