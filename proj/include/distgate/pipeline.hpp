#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "distgate/edt.hpp"
#include "distgate/gating.hpp"
#include "distgate/model.hpp"
#include "distgate/volume.hpp"

namespace distgate {

/// Working resolution (mm) every case is resampled to.
inline constexpr Vec3 kTargetSpacing{1.0, 1.0, 2.5};

/// Distance channel scale applied when building network input.
inline constexpr double kDistanceScaleMm = 100.0;

/// Volumes of one case as found on disk, before resampling.
struct RawCase {
  std::string case_id;
  ScalarVolume ct;
  ScalarVolume pet;
  BinaryMask tumor;
  LabelVolume gtvln;
};

/// A case on the common working grid with its tumor distance map.
struct CaseRecord {
  std::string case_id;
  ScalarVolume ct;
  ScalarVolume pet;
  BinaryMask tumor;
  LabelVolume gtvln;
  DistanceMap distance;

  [[nodiscard]] const VolumeGrid& grid() const { return ct.grid(); }
  [[nodiscard]] std::uint32_t instance_count() const;
};

/// Resamples images trilinearly and masks/labels by nearest neighbour, then
/// computes the tumor distance map. Label ids are re-compacted in case a tiny
/// instance vanished. Throws on empty tumor, grid mismatch, or labels that
/// overlap the tumor.
CaseRecord prepare_case(RawCase raw, const Vec3& target_spacing = kTargetSpacing);

/// Reads ct, pet, tumor and gtvln volumes from `dir`.
RawCase load_raw_case(const std::filesystem::path& dir, const std::string& case_id);
/// Writes ct, pet, tumor, gtvln and distance volumes into `dir`.
void save_case(const CaseRecord& record, const std::filesystem::path& dir);

struct CropProvenance {
  std::string case_id;
  Index3 center{};
  double angle_deg = 0.0;
  int instance = 0;  // 0 for background crops
};

/// One augmented training sample. `input` holds raw CT, PET and distance (mm).
struct TrainingCrop {
  std::array<ScalarVolume, 3> input;
  BinaryMask labels;
  GatingWeights weights;
  CropProvenance provenance;
};

struct CropSamplingOptions {
  Dims crop_size{96, 96, 64};
  int n_background = -1;  // negative: one background crop per instance
  double max_rotation_deg = 10.0;
  GatingParams gating{};
};

/// Voxel of instance `id` nearest to its centroid (physical metric).
Index3 instance_anchor(const LabelVolume& labels, std::uint32_t id);

/// One crop per ground-truth instance plus `n_background` uniformly placed
/// crops, each rotated in-plane by an angle drawn from
/// [-max_rotation_deg, max_rotation_deg]. Gating weights are recomputed from
/// the rotated distance channel. Deterministic in (case, seed).
std::vector<TrainingCrop> sample_crops(const CaseRecord& record, std::uint64_t seed, const CropSamplingOptions& options);

/// Network input for a window: CT and PET z-scored over the window, distance
/// divided by kDistanceScaleMm.
FeatureMap<float> network_input(const ScalarVolume& ct, const ScalarVolume& pet, const ScalarVolume& distance);

// --- dataset manifest --------------------------------------------------------

enum class Split { train, val, test };
std::string to_string(Split split);
Split parse_split(const std::string& name);

struct SplitFractions {
  double train = 0.6;
  double val = 0.1;
  double test = 0.3;
};

struct SplitCounts {
  int train = 0;
  int val = 0;
  int test = 0;
};

/// val and test get floor(n * fraction); the remainder goes to train.
SplitCounts split_counts(int n_cases, const SplitFractions& fractions);

struct ManifestEntry {
  std::string case_id;
  std::string dir;  // relative to the manifest directory
  Split split = Split::train;

  bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> cases;
  std::string config_json;  // generator configuration echoed for provenance

  [[nodiscard]] std::vector<ManifestEntry> select(Split split) const;
};

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

}  // namespace distgate
