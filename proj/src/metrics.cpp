#include "distgate/metrics.hpp"

#include <algorithm>
#include <set>
#include <sstream>
#include <stdexcept>
#include <utility>

#include <json.hpp>

namespace distgate {

CaseDetections make_case_detections(const std::string& case_id, const std::vector<InstancePrediction>& predictions,
                                    const MatchResult& match) {
  if (predictions.size() != match.predictions.size()) throw std::invalid_argument("match result does not fit");
  CaseDetections c{case_id, {}, static_cast<std::uint32_t>(match.gt_detected.size())};
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    c.detections.push_back({predictions[i].confidence, match.predictions[i].gt_id});
  }
  return c;
}

std::vector<PrPoint> pr_sweep(std::span<const CaseDetections> cases, std::optional<std::vector<double>> thresholds) {
  if (cases.empty()) throw std::invalid_argument("evaluation over an empty dataset");
  std::size_t total_gt = 0;
  for (const auto& c : cases) total_gt += c.gt_count;
  if (total_gt == 0) throw std::invalid_argument("evaluation needs at least one ground-truth instance");

  std::vector<double> cutoffs;
  if (thresholds) {
    cutoffs = *thresholds;
  } else {
    for (const auto& c : cases)
      for (const auto& d : c.detections) cutoffs.push_back(d.confidence);
  }
  std::sort(cutoffs.begin(), cutoffs.end());
  cutoffs.erase(std::unique(cutoffs.begin(), cutoffs.end()), cutoffs.end());

  std::vector<PrPoint> curve;
  curve.reserve(cutoffs.size());
  for (double t : cutoffs) {
    std::size_t hits = 0, fps = 0;
    std::set<std::pair<std::size_t, std::uint32_t>> detected;
    for (std::size_t ci = 0; ci < cases.size(); ++ci) {
      for (const auto& d : cases[ci].detections) {
        if (d.confidence < t) continue;
        if (d.gt_id == 0) {
          ++fps;
        } else {
          ++hits;
          detected.emplace(ci, d.gt_id);
        }
      }
    }
    PrPoint p;
    p.threshold = t;
    p.precision = hits + fps == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(hits + fps);
    p.recall = static_cast<double>(detected.size()) / static_cast<double>(total_gt);
    p.fps_per_patient = static_cast<double>(fps) / static_cast<double>(cases.size());
    curve.push_back(p);
  }
  return curve;
}

std::vector<double> default_precision_levels() {
  std::vector<double> levels;
  for (int k = 2; k <= 10; ++k) levels.push_back(k / 20.0);
  return levels;
}

RecallSummary mean_recall(std::span<const PrPoint> curve, const std::vector<double>& levels) {
  if (levels.empty()) throw std::invalid_argument("no precision levels");
  RecallSummary s;
  s.levels = levels;
  for (double level : levels) {
    double best = 0.0;
    for (const auto& p : curve) {
      if (p.precision >= level) best = std::max(best, p.recall);
    }
    s.recall_at.push_back(best);
  }
  double sum = 0.0;
  for (double r : s.recall_at) sum += r;
  s.mean = sum / static_cast<double>(levels.size());
  s.max = *std::max_element(s.recall_at.begin(), s.recall_at.end());
  return s;
}

FrocSummary froc(std::span<const PrPoint> curve, const std::vector<double>& fp_levels) {
  if (fp_levels.empty()) throw std::invalid_argument("no FP levels");
  FrocSummary s;
  s.fp_levels = fp_levels;
  for (double level : fp_levels) {
    double best_fps = -1.0;
    double recall = 0.0;
    for (const auto& p : curve) {
      if (p.fps_per_patient > level) continue;
      if (p.fps_per_patient > best_fps) {
        best_fps = p.fps_per_patient;
        recall = p.recall;
      } else if (p.fps_per_patient == best_fps) {
        recall = std::max(recall, p.recall);
      }
    }
    s.recall_at.push_back(recall);
  }
  double sum = 0.0;
  for (double r : s.recall_at) sum += r;
  s.mean = sum / static_cast<double>(fp_levels.size());
  return s;
}

EvalReport evaluate(std::span<const CaseDetections> cases) {
  EvalReport r;
  r.curve = pr_sweep(cases);
  r.num_cases = cases.size();
  for (const auto& c : cases) {
    r.num_gt += c.gt_count;
    r.num_predictions += c.detections.size();
  }
  r.recall = mean_recall(r.curve);
  r.froc = froc(r.curve);
  return r;
}

std::string report_to_json(const EvalReport& report) {
  using nlohmann::json;
  json points = json::array();
  for (const auto& p : report.curve) {
    points.push_back({{"threshold", p.threshold},
                      {"precision", p.precision},
                      {"recall", p.recall},
                      {"fps_per_patient", p.fps_per_patient}});
  }
  json froc_at = json::object();
  for (std::size_t i = 0; i < report.froc.fp_levels.size(); ++i) {
    std::ostringstream key;
    key << report.froc.fp_levels[i];
    froc_at[key.str()] = report.froc.recall_at[i];
  }
  json doc = {
      {"num_cases", report.num_cases},
      {"num_gt", report.num_gt},
      {"num_predictions", report.num_predictions},
      {"mRecall", report.recall.mean},
      {"recall_max", report.recall.max},
      {"recall_at_precision", report.recall.recall_at},
      {"precision_levels", report.recall.levels},
      {"froc_at", froc_at},
      {"mFROC", report.froc.mean},
      {"points", points},
  };
  return doc.dump(2);
}

std::string curve_to_csv(std::span<const PrPoint> curve) {
  std::ostringstream out;
  out.precision(17);
  out << "threshold,precision,recall,fps_per_patient\n";
  for (const auto& p : curve) {
    out << p.threshold << ',' << p.precision << ',' << p.recall << ',' << p.fps_per_patient << '\n';
  }
  return out.str();
}

}  // namespace distgate
