#include "distgate/experiment.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "distgate/parallel.hpp"

namespace distgate {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

EvalReport score(const std::vector<CaseRecord>& cases, const std::vector<ScalarVolume>& probs,
                 const ExtractionOptions& extraction) {
  std::vector<CaseDetections> detections(cases.size());
  parallel_for(cases.size(), [&](std::size_t c) {
    const auto instances = extract_instances(probs[c], extraction, cases[c].case_id);
    detections[c] = make_case_detections(cases[c].case_id, instances, match_hits(instances, cases[c].gtvln));
  });
  return evaluate(detections);
}

double tail_mean(const std::vector<double>& losses) {
  const std::size_t n = std::min<std::size_t>(50, losses.size());
  double s = 0.0;
  for (std::size_t i = losses.size() - n; i < losses.size(); ++i) s += losses[i];
  return n ? s / static_cast<double>(n) : 0.0;
}

}  // namespace

EvalReport evaluate_model(const SegmenterParams& params, const std::vector<CaseRecord>& cases,
                          const SlidingWindowOptions& window, const GatingParams& gating,
                          const ExtractionOptions& extraction) {
  std::vector<ScalarVolume> probs;
  probs.reserve(cases.size());
  for (const auto& c : cases) probs.push_back(sliding_window_predict(params, c, window, gating));
  return score(cases, probs, extraction);
}

EvalReport evaluate_oracle(const std::vector<CaseRecord>& cases, const ExtractionOptions& extraction) {
  std::vector<ScalarVolume> probs;
  probs.reserve(cases.size());
  for (const auto& c : cases) {
    ScalarVolume p(c.grid());
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = c.gtvln[i] ? 1.0f : 0.0f;
    probs.push_back(std::move(p));
  }
  return score(cases, probs, extraction);
}

void EndToEndConfig::validate() const {
  if (n_cases < 3) throw std::invalid_argument("end-to-end needs at least 3 cases");
  phantom.validate();
  train.validate();
  if (modes.empty()) throw std::invalid_argument("no modes to compare");
  for (const auto& m : modes) gating_for_mode(m, train.gating);
  if (!(extraction.threshold > 0.0 && extraction.threshold < 1.0)) {
    throw std::invalid_argument("extraction threshold must lie in (0, 1)");
  }
  for (int a = 0; a < 3; ++a) {
    if (window.window[a] < 1 || window.stride[a] < 1 || window.window[a] < window.stride[a]) {
      throw std::invalid_argument("window must be >= stride >= 1 on every axis");
    }
  }
}

std::string EndToEndConfig::to_json() const {
  json j = {
      {"seed", seed},
      {"n_cases", n_cases},
      {"split", {{"train", fractions.train}, {"val", fractions.val}, {"test", fractions.test}}},
      {"phantom", json::parse(phantom.to_json())},
      {"train", json::parse(train.to_json())},
      {"window", window.window},
      {"stride", window.stride},
      {"threshold", extraction.threshold},
      {"min_voxels", extraction.min_voxels},
      {"confidence", to_string(extraction.confidence)},
      {"modes", modes},
      {"oracle", oracle},
  };
  return j.dump();
}

EndToEndConfig EndToEndConfig::from_json(const std::string& text, const EndToEndConfig& base) {
  EndToEndConfig c = base;
  try {
    const json j = json::parse(text);
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("seed", c.seed);
    get("n_cases", c.n_cases);
    if (j.contains("split")) {
      const auto& s = j.at("split");
      c.fractions.train = s.value("train", c.fractions.train);
      c.fractions.val = s.value("val", c.fractions.val);
      c.fractions.test = s.value("test", c.fractions.test);
    }
    if (j.contains("phantom")) {
      json merged = json::parse(c.phantom.to_json());
      merged.update(j.at("phantom"));
      c.phantom = PhantomConfig::from_json(merged.dump());
    }
    if (j.contains("train")) c.train = TrainConfig::from_json(j.at("train").dump(), c.train);
    get("window", c.window.window);
    get("stride", c.window.stride);
    get("threshold", c.extraction.threshold);
    get("min_voxels", c.extraction.min_voxels);
    if (j.contains("confidence")) c.extraction.confidence = parse_confidence_kind(j.at("confidence").get<std::string>());
    get("modes", c.modes);
    get("oracle", c.oracle);
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("invalid end-to-end config: ") + e.what());
  }
  c.validate();
  return c;
}

std::vector<CaseRecord> load_split(const fs::path& data_dir, const DatasetManifest& manifest, Split split) {
  const auto entries = manifest.select(split);
  std::vector<CaseRecord> cases(entries.size());
  parallel_for(entries.size(), [&](std::size_t i) {
    cases[i] = prepare_case(load_raw_case(data_dir / entries[i].dir, entries[i].case_id));
  });
  return cases;
}

EndToEndResult run_end_to_end(const EndToEndConfig& requested, const fs::path& data_dir) {
  requested.validate();
  EndToEndConfig config = requested;
  seed_training(config.train, config.seed);
  std::vector<CaseRecord> train_cases;
  std::vector<CaseRecord> test_cases;
  if (!data_dir.empty()) {
    const auto manifest = load_manifest(data_dir / "manifest.json");
    train_cases = load_split(data_dir, manifest, Split::train);
    test_cases = load_split(data_dir, manifest, Split::test);
  } else {
    const auto manifest = plan_dataset(config.seed, config.n_cases, config.fractions, config.phantom);
    std::vector<CaseRecord> all(manifest.cases.size());
    parallel_for(all.size(), [&](std::size_t i) {
      all[i] = generate_indexed_case(config.seed, static_cast<int>(i), config.phantom).record;
    });
    for (std::size_t i = 0; i < all.size(); ++i) {
      if (manifest.cases[i].split == Split::train) train_cases.push_back(std::move(all[i]));
      if (manifest.cases[i].split == Split::test) test_cases.push_back(std::move(all[i]));
    }
  }
  if (train_cases.empty() || test_cases.empty()) throw std::invalid_argument("train or test split is empty");

  EndToEndResult result;
  result.config_json = config.to_json();
  for (const auto& mode : config.modes) {
    ModeResult r;
    r.mode = mode;
    if (config.oracle) {
      r.report = evaluate_oracle(test_cases, config.extraction);
    } else {
      TrainConfig tc = config.train;
      tc.gating = gating_for_mode(mode, config.train.gating);
      auto trained = train_segmenter(train_cases, tc);
      r.losses = std::move(trained.losses);
      r.report = evaluate_model(trained.params, test_cases, config.window, tc.gating, config.extraction);
    }
    result.modes.push_back(std::move(r));
  }
  return result;
}

namespace {

double froc_at(const EvalReport& r, double level) {
  for (std::size_t i = 0; i < r.froc.fp_levels.size(); ++i) {
    if (r.froc.fp_levels[i] == level) return r.froc.recall_at[i];
  }
  throw std::logic_error("FROC level not evaluated");
}

}  // namespace

std::string comparison_csv(const EndToEndResult& result) {
  std::ostringstream out;
  out << "mode,mRecall,Recall_max,mFROC,FROC@4,FROC@6\n" << std::setprecision(17);
  for (const auto& m : result.modes) {
    out << m.mode << ',' << m.report.recall.mean << ',' << m.report.recall.max << ',' << m.report.froc.mean << ','
        << froc_at(m.report, 4.0) << ',' << froc_at(m.report, 6.0) << '\n';
  }
  return out.str();
}

std::string comparison_json(const EndToEndResult& result) {
  json modes = json::object();
  json training = json::object();
  for (const auto& m : result.modes) {
    modes[m.mode] = {{"mRecall", m.report.recall.mean},
                     {"Recall_max", m.report.recall.max},
                     {"mFROC", m.report.froc.mean},
                     {"FROC@4", froc_at(m.report, 4.0)},
                     {"FROC@6", froc_at(m.report, 6.0)}};
    if (!m.losses.empty()) {
      training[m.mode] = {{"steps", m.losses.size()},
                          {"initial_loss", m.losses.front()},
                          {"final_loss", m.losses.back()},
                          {"tail_mean_loss", tail_mean(m.losses)}};
    }
  }
  json doc = {{"config", json::parse(result.config_json)},
              {"columns", {"mRecall", "Recall_max", "mFROC", "FROC@4", "FROC@6"}},
              {"modes", modes},
              {"training", training}};
  return doc.dump(2);
}

}  // namespace distgate
