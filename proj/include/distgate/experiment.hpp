#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "distgate/inference.hpp"
#include "distgate/instances.hpp"
#include "distgate/metrics.hpp"
#include "distgate/phantom.hpp"
#include "distgate/train.hpp"

namespace distgate {

/// Detection quality of a model on a set of prepared cases.
EvalReport evaluate_model(const SegmenterParams& params, const std::vector<CaseRecord>& cases,
                          const SlidingWindowOptions& window, const GatingParams& gating,
                          const ExtractionOptions& extraction);

/// Ground truth fed back as the probability volume (1 inside GT, 0 outside).
EvalReport evaluate_oracle(const std::vector<CaseRecord>& cases, const ExtractionOptions& extraction);

struct EndToEndConfig {
  std::uint64_t seed = 7;
  int n_cases = 30;
  SplitFractions fractions{};
  PhantomConfig phantom{};
  TrainConfig train{};  // gating.kind is set per mode
  SlidingWindowOptions window{};
  ExtractionOptions extraction{};
  std::vector<std::string> modes{"single", "bg", "sg"};
  bool oracle = false;  // skip training and score the ground truth

  void validate() const;
  [[nodiscard]] std::string to_json() const;
  /// Missing keys keep the values of `base`.
  static EndToEndConfig from_json(const std::string& text, const EndToEndConfig& base);
  static EndToEndConfig from_json(const std::string& text) { return from_json(text, EndToEndConfig{}); }
};

struct ModeResult {
  std::string mode;
  EvalReport report;
  std::vector<double> losses;
};

struct EndToEndResult {
  std::string config_json;
  std::vector<ModeResult> modes;
};

/// Prepared cases of one split of a dataset directory.
std::vector<CaseRecord> load_split(const std::filesystem::path& data_dir, const DatasetManifest& manifest, Split split);

/// Generates the phantom set in memory (or loads `data_dir` when non-empty),
/// trains every mode with the same seeds on the train split and evaluates on
/// the test split. Training and model seeds are derived from `config.seed`;
/// the echoed config carries the derived values.
EndToEndResult run_end_to_end(const EndToEndConfig& config, const std::filesystem::path& data_dir = {});

/// Table columns: mode, mRecall, Recall_max, mFROC, FROC@4, FROC@6.
std::string comparison_csv(const EndToEndResult& result);
/// {"config": ..., "columns": [...], "modes": {mode: {column: value}, ...},
/// "training": {mode: {initial_loss, final_loss, steps}}}.
std::string comparison_json(const EndToEndResult& result);

}  // namespace distgate
