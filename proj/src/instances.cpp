#include "distgate/instances.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include <json.hpp>

namespace distgate {

std::string to_string(ConfidenceKind kind) {
  switch (kind) {
    case ConfidenceKind::mean: return "mean";
    case ConfidenceKind::max: return "max";
    case ConfidenceKind::p90: return "p90";
  }
  return "?";
}

ConfidenceKind parse_confidence_kind(const std::string& name) {
  if (name == "mean") return ConfidenceKind::mean;
  if (name == "max") return ConfidenceKind::max;
  if (name == "p90") return ConfidenceKind::p90;
  throw std::invalid_argument("unknown confidence kind '" + name + "'");
}

double equivalent_radius_mm(std::size_t voxel_count, const VolumeGrid& grid) {
  const double volume = static_cast<double>(voxel_count) * grid.voxel_volume_mm3();
  return std::cbrt(3.0 * volume / (4.0 * std::numbers::pi));
}

std::vector<InstancePrediction> extract_instances(const ScalarVolume& prob, const ExtractionOptions& options,
                                                  const std::string& case_id) {
  if (!(options.threshold > 0.0 && options.threshold < 1.0)) {
    throw std::invalid_argument("extraction threshold must lie in (0, 1)");
  }
  const auto& g = prob.grid();
  std::vector<std::uint8_t> visited(prob.size(), 0);
  std::vector<InstancePrediction> out;
  std::vector<std::size_t> stack;

  for (std::size_t seed = 0; seed < prob.size(); ++seed) {
    if (visited[seed] || prob[seed] < options.threshold) continue;
    std::vector<std::size_t> voxels;
    visited[seed] = 1;
    stack.push_back(seed);
    while (!stack.empty()) {
      const auto i = stack.back();
      stack.pop_back();
      voxels.push_back(i);
      const auto p = g.coords(i);
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            const int x = p[0] + dx, y = p[1] + dy, z = p[2] + dz;
            if (!g.contains(x, y, z)) continue;
            const auto j = g.index(x, y, z);
            if (visited[j] || prob[j] < options.threshold) continue;
            visited[j] = 1;
            stack.push_back(j);
          }
    }
    if (voxels.size() < options.min_voxels) continue;
    std::sort(voxels.begin(), voxels.end());

    InstancePrediction inst;
    inst.case_id = case_id;
    inst.grid = g;
    std::vector<double> values;
    values.reserve(voxels.size());
    Vec3 c{0, 0, 0};
    for (auto i : voxels) {
      values.push_back(prob[i]);
      const auto q = g.physical(g.coords(i));
      for (int a = 0; a < 3; ++a) c[a] += q[a];
    }
    for (auto& v : c) v /= static_cast<double>(voxels.size());
    inst.centroid_mm = c;
    switch (options.confidence) {
      case ConfidenceKind::mean: {
        double s = 0;
        for (double v : values) s += v;
        inst.confidence = s / static_cast<double>(values.size());
        break;
      }
      case ConfidenceKind::max: inst.confidence = *std::max_element(values.begin(), values.end()); break;
      case ConfidenceKind::p90: {
        std::sort(values.begin(), values.end());
        const auto k = static_cast<std::size_t>(std::ceil(0.9 * static_cast<double>(values.size()))) - 1;
        inst.confidence = values[std::min(k, values.size() - 1)];
        break;
      }
    }
    inst.radius_mm = equivalent_radius_mm(voxels.size(), g);
    inst.voxels = std::move(voxels);
    out.push_back(std::move(inst));
  }
  return out;
}

std::size_t MatchResult::hits() const {
  return static_cast<std::size_t>(std::count_if(predictions.begin(), predictions.end(), [](auto& p) { return p.hit(); }));
}
std::size_t MatchResult::false_positives() const { return predictions.size() - hits(); }
std::size_t MatchResult::detected() const {
  return static_cast<std::size_t>(std::count(gt_detected.begin(), gt_detected.end(), true));
}

MatchResult match_hits(const std::vector<InstancePrediction>& predictions, const LabelVolume& gt) {
  const auto k = validate_labels(gt);
  MatchResult result;
  result.gt_detected.assign(k, false);

  std::vector<std::size_t> gt_voxels(k + 1, 0);
  for (auto v : gt.data()) ++gt_voxels[v];
  for (std::uint32_t id = 1; id <= k; ++id) {
    result.gt_radius_mm.push_back(equivalent_radius_mm(gt_voxels[id], gt.grid()));
  }

  std::vector<std::size_t> overlap(k + 1, 0);
  for (const auto& pred : predictions) {
    if (pred.grid != gt.grid()) throw std::invalid_argument("prediction and ground truth grids differ");
    std::fill(overlap.begin(), overlap.end(), 0);
    for (auto i : pred.voxels) ++overlap[gt[i]];

    PredictionMatch m;
    for (std::uint32_t id = 1; id <= k; ++id) {
      if (overlap[id] > m.overlap_voxels) {
        m.overlap_voxels = overlap[id];
        m.overlap_gt = id;
      }
    }
    if (m.overlap_gt != 0) {
      m.radius_ratio = pred.radius_mm / result.gt_radius_mm[m.overlap_gt - 1];
      if (m.radius_ratio >= kMinRadiusRatio && m.radius_ratio <= kMaxRadiusRatio) {
        m.gt_id = m.overlap_gt;
        result.gt_detected[m.gt_id - 1] = true;
      }
    }
    result.predictions.push_back(m);
  }
  return result;
}

std::string instances_to_json(const std::vector<InstancePrediction>& predictions, const MatchResult& match) {
  if (match.predictions.size() != predictions.size()) throw std::invalid_argument("match result does not fit");
  auto doc = nlohmann::json::array();
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& p = predictions[i];
    nlohmann::json entry = {
        {"case_id", p.case_id},
        {"voxels_count", p.voxels.size()},
        {"centroid", {p.centroid_mm[0], p.centroid_mm[1], p.centroid_mm[2]}},
        {"confidence", p.confidence},
        {"radius_mm", p.radius_mm},
    };
    entry["match"] = match.predictions[i].hit() ? nlohmann::json(match.predictions[i].gt_id) : nlohmann::json(nullptr);
    doc.push_back(std::move(entry));
  }
  return doc.dump(2);
}

}  // namespace distgate
