#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "distgate/gating.hpp"
#include "distgate/model.hpp"
#include "distgate/pipeline.hpp"

namespace distgate {

/// Training setup. `gating.kind` selects the mode: single, binary (bg) or
/// soft (sg).
struct TrainConfig {
  GatingParams gating{};
  int steps = 2000;
  int batch = 4;  // crops whose gradients are averaged per step
  double lr = 0.01;
  double momentum = 0.9;
  Dims crop_size{24, 24, 8};
  double max_rotation_deg = 10.0;
  int n_background = -1;  // per case; negative: one per instance
  SegmenterConfig model{};
  std::uint64_t seed = 0;  // crop sampling and order; model init uses model.seed

  void validate() const;
  [[nodiscard]] std::string to_json() const;
  /// Missing keys keep the values of `base`.
  static TrainConfig from_json(const std::string& text, const TrainConfig& base);
  static TrainConfig from_json(const std::string& text) { return from_json(text, TrainConfig{}); }
};

/// Sets the crop and model seeds from streams of one root seed.
void seed_training(TrainConfig& config, std::uint64_t root_seed);

/// Short mode name used on the command line and in reports: single, bg, sg.
std::string mode_name(GateKind kind);
GatingParams gating_for_mode(const std::string& mode, const GatingParams& thresholds = {});

struct TrainResult {
  SegmenterParams params;
  std::vector<double> losses;  // mean crop loss of each step
};

/// Loss and parameter gradient of one crop.
struct CropGradient {
  double loss = 0.0;
  SegmenterParams grads;
};
CropGradient crop_gradient(const SegmenterParams& params, const TrainingCrop& crop);

/// Momentum SGD over crops of `cases`. Crops are drawn epoch by epoch: every
/// epoch samples fresh crops from each case and shuffles them. Gradients of a
/// batch are computed in parallel and summed in batch order, so the
/// trajectory does not depend on the thread count.
/// `on_step(step, loss)` is called after every step when set.
TrainResult train_segmenter(const std::vector<CaseRecord>& cases, const TrainConfig& config,
                            const std::function<void(int, double)>& on_step = {});

void save_loss_log(const std::vector<double>& losses, const std::filesystem::path& path);

}  // namespace distgate
