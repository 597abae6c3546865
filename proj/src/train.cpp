#include "distgate/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <stdexcept>

#include <json.hpp>

#include "distgate/loss.hpp"
#include "distgate/parallel.hpp"
#include "distgate/rng.hpp"

namespace distgate {

using nlohmann::json;

void TrainConfig::validate() const {
  gating.validate();
  model.validate();
  if (model.in_channels != 3) throw std::invalid_argument("the segmenter input is CT, PET and distance (3 channels)");
  if (steps < 1) throw std::invalid_argument("steps must be >= 1");
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  for (int s : crop_size) {
    if (s < 1) throw std::invalid_argument("crop size must be >= 1");
  }
  if (!(max_rotation_deg >= 0.0 && max_rotation_deg <= kMaxRotationDeg)) {
    throw std::invalid_argument("max rotation must lie in [0, 45] degrees");
  }
}

std::string mode_name(GateKind kind) {
  switch (kind) {
    case GateKind::single: return "single";
    case GateKind::binary: return "bg";
    case GateKind::soft: return "sg";
  }
  return "?";
}

void seed_training(TrainConfig& config, std::uint64_t root_seed) {
  const Rng root(root_seed);
  config.seed = root.split(0x7a1)();
  config.model.seed = root.split(0x30d)();
}

GatingParams gating_for_mode(const std::string& mode, const GatingParams& thresholds) {
  GatingParams g = thresholds;
  g.kind = parse_gate_kind(mode);
  g.validate();
  return g;
}

std::string TrainConfig::to_json() const {
  json trunk = json::array();
  for (const auto& l : model.trunk) trunk.push_back({{"channels", l.out_channels}, {"kernel", l.kernel}});
  json j = {
      {"mode", mode_name(gating.kind)},
      {"d0_mm", gating.d0_mm},
      {"d_prox_mm", gating.d_prox_mm},
      {"d_dist_mm", gating.d_dist_mm},
      {"steps", steps},
      {"batch", batch},
      {"lr", lr},
      {"momentum", momentum},
      {"crop_size", crop_size},
      {"max_rotation_deg", max_rotation_deg},
      {"n_background", n_background},
      {"trunk", trunk},
      {"model_seed", model.seed},
      {"seed", seed},
  };
  return j.dump();
}

TrainConfig TrainConfig::from_json(const std::string& text, const TrainConfig& base) {
  TrainConfig c = base;
  try {
    const json j = json::parse(text);
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("d0_mm", c.gating.d0_mm);
    get("d_prox_mm", c.gating.d_prox_mm);
    get("d_dist_mm", c.gating.d_dist_mm);
    if (j.contains("mode")) c.gating.kind = parse_gate_kind(j.at("mode").get<std::string>());
    get("steps", c.steps);
    get("batch", c.batch);
    get("lr", c.lr);
    get("momentum", c.momentum);
    get("crop_size", c.crop_size);
    get("max_rotation_deg", c.max_rotation_deg);
    get("n_background", c.n_background);
    get("model_seed", c.model.seed);
    get("seed", c.seed);
    if (j.contains("trunk")) {
      c.model.trunk.clear();
      for (const auto& l : j.at("trunk")) c.model.trunk.push_back({l.at("channels").get<int>(), l.value("kernel", 3)});
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("invalid training config: ") + e.what());
  }
  c.validate();
  return c;
}

CropGradient crop_gradient(const SegmenterParams& params, const TrainingCrop& crop) {
  auto state = forward_state(params, network_input(crop.input[0], crop.input[1], crop.input[2]));
  const GatedLossView<float> view{{std::span<const float>(state.probs[0]), std::span<const float>(state.probs[1])},
                                  crop.labels.data(),
                                  {crop.weights.prox.data(), crop.weights.dist.data()}};
  CropGradient out;
  out.loss = gated_nll(view);
  std::array<std::vector<float>, 2> g{std::vector<float>(state.probs[0].size()),
                                      std::vector<float>(state.probs[1].size())};
  gated_nll_grad(view, {std::span<float>(g[0]), std::span<float>(g[1])});
  out.grads = backward(params, state, {std::span<const float>(g[0]), std::span<const float>(g[1])});
  return out;
}

namespace {

// Endless stream of crops: each epoch samples every case afresh and shuffles.
class CropStream {
 public:
  CropStream(const std::vector<CaseRecord>& cases, const TrainConfig& config)
      : cases_(cases), root_(Rng(config.seed).split(0x7a41)) {
    options_.crop_size = config.crop_size;
    options_.n_background = config.n_background;
    options_.max_rotation_deg = config.max_rotation_deg;
    options_.gating = config.gating;
  }

  const TrainingCrop& next() {
    if (pos_ == pool_.size()) refill();
    return pool_[pos_++];
  }

 private:
  void refill() {
    const Rng epoch_rng = root_.split(epoch_++);
    std::vector<std::vector<TrainingCrop>> per_case(cases_.size());
    parallel_for(cases_.size(), [&](std::size_t c) {
      Rng r = epoch_rng.split(c);
      per_case[c] = sample_crops(cases_[c], r(), options_);
    });
    pool_.clear();
    for (auto& v : per_case) {
      for (auto& crop : v) pool_.push_back(std::move(crop));
    }
    if (pool_.empty()) throw std::invalid_argument("training cases yield no crops");
    Rng shuffle_rng = epoch_rng.split(~std::uint64_t{0});
    shuffle_rng.shuffle(std::span<TrainingCrop>(pool_));
    pos_ = 0;
  }

  const std::vector<CaseRecord>& cases_;
  Rng root_;
  CropSamplingOptions options_;
  std::vector<TrainingCrop> pool_;
  std::size_t pos_ = 0;
  std::uint64_t epoch_ = 0;
};

}  // namespace

TrainResult train_segmenter(const std::vector<CaseRecord>& cases, const TrainConfig& config,
                            const std::function<void(int, double)>& on_step) {
  config.validate();
  if (cases.empty()) throw std::invalid_argument("no training cases");

  TrainResult result;
  result.params = init_params(config.model);
  MomentumSgd optimizer(result.params, config.lr, config.momentum);
  CropStream stream(cases, config);

  const auto batch = static_cast<std::size_t>(config.batch);
  std::vector<const TrainingCrop*> crops(batch);
  std::vector<CropGradient> parts(batch);
  for (int step = 0; step < config.steps; ++step) {
    for (auto& c : crops) c = &stream.next();
    parallel_for(batch, [&](std::size_t b) { parts[b] = crop_gradient(result.params, *crops[b]); });

    auto grads = zeros_like(result.params);
    double loss = 0.0;
    for (const auto& p : parts) {
      add_scaled(grads, p.grads, 1.0 / static_cast<double>(batch));
      loss += p.loss;
    }
    loss /= static_cast<double>(batch);
    if (!std::isfinite(loss)) throw std::runtime_error("non-finite training loss at step " + std::to_string(step + 1));
    optimizer.step(result.params, grads);
    result.losses.push_back(loss);
    if (on_step) on_step(step + 1, loss);
  }
  return result;
}

void save_loss_log(const std::vector<double>& losses, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss log " + path.string());
  out << "step,loss\n" << std::setprecision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i + 1 << ',' << losses[i] << '\n';
}

}  // namespace distgate
