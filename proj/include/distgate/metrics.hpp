#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "distgate/instances.hpp"

namespace distgate {

/// One scored prediction after matching. gt_id 0 marks a false positive.
struct Detection {
  double confidence = 0.0;
  std::uint32_t gt_id = 0;
};

struct CaseDetections {
  std::string case_id;
  std::vector<Detection> detections;
  std::uint32_t gt_count = 0;
};

CaseDetections make_case_detections(const std::string& case_id, const std::vector<InstancePrediction>& predictions,
                                    const MatchResult& match);

struct PrPoint {
  double threshold = 0.0;
  double precision = 1.0;
  double recall = 0.0;
  double fps_per_patient = 0.0;
};

/// Operating points at each confidence cutoff t (keep confidence >= t):
/// recall = detected GT / total GT, precision = hits / (hits + FPs) (1 when
/// nothing survives), fps_per_patient = FPs / cases. Thresholds default to the
/// distinct observed confidences. Points come back sorted by ascending
/// threshold. Throws on an empty dataset or one without GT instances.
std::vector<PrPoint> pr_sweep(std::span<const CaseDetections> cases,
                              std::optional<std::vector<double>> thresholds = std::nullopt);

/// Precision levels 0.10, 0.15, ..., 0.50, built as k/20 so that they equal
/// the corresponding decimal literals exactly.
std::vector<double> default_precision_levels();
inline const std::vector<double> kFrocLevels{3.0, 4.0, 6.0, 8.0};

struct RecallSummary {
  std::vector<double> levels;
  std::vector<double> recall_at;  // max recall over points with precision >= level
  double mean = 0.0;              // mRecall
  double max = 0.0;               // Recall_max
};

RecallSummary mean_recall(std::span<const PrPoint> curve, const std::vector<double>& levels = default_precision_levels());

struct FrocSummary {
  std::vector<double> fp_levels;
  std::vector<double> recall_at;  // step function: point with the largest fps <= level
  double mean = 0.0;              // mFROC
};

FrocSummary froc(std::span<const PrPoint> curve, const std::vector<double>& fp_levels = kFrocLevels);

struct EvalReport {
  std::size_t num_cases = 0;
  std::size_t num_gt = 0;
  std::size_t num_predictions = 0;
  std::vector<PrPoint> curve;
  RecallSummary recall;
  FrocSummary froc;
};

EvalReport evaluate(std::span<const CaseDetections> cases);

std::string report_to_json(const EvalReport& report);
std::string curve_to_csv(std::span<const PrPoint> curve);

}  // namespace distgate
