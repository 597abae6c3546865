#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "distgate/volume.hpp"

namespace distgate {

/// Hit criterion: predicted / ground-truth radius must lie in this range.
inline constexpr double kMinRadiusRatio = 0.5;
inline constexpr double kMaxRadiusRatio = 1.5;

enum class ConfidenceKind { mean, max, p90 };
std::string to_string(ConfidenceKind kind);
ConfidenceKind parse_confidence_kind(const std::string& name);

struct ExtractionOptions {
  double threshold = 0.5;
  std::size_t min_voxels = 4;
  ConfidenceKind confidence = ConfidenceKind::mean;
};

struct InstancePrediction {
  std::string case_id;
  VolumeGrid grid;
  std::vector<std::size_t> voxels;  // ascending linear indices
  double confidence = 0.0;
  double radius_mm = 0.0;
  Vec3 centroid_mm{};
};

/// Radius of the sphere with the physical volume of `voxel_count` voxels.
double equivalent_radius_mm(std::size_t voxel_count, const VolumeGrid& grid);

/// 26-connected components of {P >= threshold}; components below min_voxels
/// are dropped. Components are reported in order of their first voxel.
std::vector<InstancePrediction> extract_instances(const ScalarVolume& prob, const ExtractionOptions& options = {},
                                                  const std::string& case_id = {});

struct PredictionMatch {
  std::uint32_t gt_id = 0;  // 0: false positive
  std::uint32_t overlap_gt = 0;  // GT with maximal overlap, 0 if none
  std::size_t overlap_voxels = 0;
  double radius_ratio = 0.0;  // pred / GT radius, 0 when no overlap

  [[nodiscard]] bool hit() const { return gt_id != 0; }
};

struct MatchResult {
  std::vector<PredictionMatch> predictions;
  std::vector<bool> gt_detected;      // index k - 1 for GT id k
  std::vector<double> gt_radius_mm;   // index k - 1 for GT id k

  [[nodiscard]] std::size_t hits() const;
  [[nodiscard]] std::size_t false_positives() const;
  [[nodiscard]] std::size_t detected() const;
};

/// A prediction is assigned to the overlapping GT instance with the largest
/// overlap (ties: lower id) and hits it when pred/GT radius lies in
/// [0.5, 1.5]. Several predictions may hit one GT; each counts as a hit.
MatchResult match_hits(const std::vector<InstancePrediction>& predictions, const LabelVolume& gt);

/// [{case_id, voxels_count, centroid, confidence, radius_mm, match}], match
/// being the hit GT id or null for a false positive.
std::string instances_to_json(const std::vector<InstancePrediction>& predictions, const MatchResult& match);

}  // namespace distgate
