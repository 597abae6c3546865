#include <doctest.h>

#include <sstream>

#include <json.hpp>

#include "distgate/metrics.hpp"
#include "distgate/rng.hpp"
#include "metrics_fixture.hpp"

using namespace distgate;

namespace {

PrPoint point(double precision, double recall, double fps = 0.0) {
  PrPoint p;
  p.precision = precision;
  p.recall = recall;
  p.fps_per_patient = fps;
  return p;
}

std::vector<CaseDetections> random_cases(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<CaseDetections> cases(6);
  for (std::size_t c = 0; c < cases.size(); ++c) {
    cases[c].case_id = "c" + std::to_string(c);
    cases[c].gt_count = 1 + static_cast<std::uint32_t>(rng.below(4));
    const int n = static_cast<int>(rng.below(12));
    for (int k = 0; k < n; ++k) {
      const std::uint32_t gt = rng.below(2) ? 1 + static_cast<std::uint32_t>(rng.below(cases[c].gt_count)) : 0;
      cases[c].detections.push_back({rng.uniform(), gt});
    }
  }
  return cases;
}

}  // namespace

TEST_CASE("two-case fixture") {
  const auto cases = fixtures::two_case_detections();
  const auto curve = pr_sweep(cases, fixtures::kFixtureThresholds);
  REQUIRE(curve.size() == 2);
  CHECK(curve[0].threshold == 0.45);
  CHECK(curve[0].precision == 0.4);
  CHECK(curve[0].recall == 0.5);
  CHECK(curve[0].fps_per_patient == 1.5);
  CHECK(curve[1].threshold == 0.75);
  CHECK(curve[1].precision == 0.5);
  CHECK(curve[1].recall == 0.25);
  CHECK(curve[1].fps_per_patient == 0.5);

  // Seven levels (0.10 to 0.40) admit the 0.45 cutoff with recall 1/2; 0.45
  // and 0.50 only admit the 0.75 cutoff with recall 1/4.
  const auto r = mean_recall(curve);
  CHECK(r.recall_at == std::vector<double>{0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.25, 0.25});
  CHECK(r.mean == doctest::Approx(4.0 / 9.0).epsilon(1e-15));
  CHECK(r.max == 0.5);

  const auto f = froc(curve);
  CHECK(f.recall_at == std::vector<double>{0.5, 0.5, 0.5, 0.5});
  CHECK(f.mean == 0.5);
}

TEST_CASE("fixture with twelve extra false positives") {
  auto cases = fixtures::two_case_detections();
  for (int k = 0; k < 12; ++k) cases[0].detections.push_back({0.4, 0});
  const auto curve = pr_sweep(cases, std::vector<double>{0.75, 0.45, 0.35});
  REQUIRE(curve.size() == 3);
  CHECK(curve[0].threshold == 0.35);
  CHECK(curve[0].fps_per_patient == 7.5);
  CHECK(curve[0].recall == 0.5);
  const auto f = froc(curve);
  CHECK(f.recall_at == std::vector<double>{0.5, 0.5, 0.5, 0.5});

  // A hit added at 0.4 makes the 7.5-FP point visible at the 8-FP level only.
  cases[1].detections.push_back({0.4, 2});
  const auto f2 = froc(pr_sweep(cases, std::vector<double>{0.75, 0.45, 0.35}));
  CHECK(f2.recall_at == std::vector<double>{0.5, 0.5, 0.5, 0.75});
  CHECK(f2.mean == doctest::Approx(2.25 / 4.0));
}

TEST_CASE("default thresholds are the observed confidences") {
  const auto curve = pr_sweep(fixtures::two_case_detections());
  REQUIRE(curve.size() == 5);
  CHECK(curve.front().threshold == 0.5);
  CHECK(curve.back().threshold == 0.9);
  CHECK(curve.back().precision == 1.0);
  CHECK(curve.back().recall == 0.25);
  CHECK(curve[2].precision == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("precision levels") {
  const auto levels = default_precision_levels();
  REQUIRE(levels.size() == 9);
  CHECK(levels.front() == 0.10);
  CHECK(levels[1] == 0.15);
  CHECK(levels[7] == 0.45);
  CHECK(levels.back() == 0.50);
}

TEST_CASE("oracle detections score one") {
  std::vector<CaseDetections> cases{{"a", {{1.0, 1}, {1.0, 2}}, 2}, {"b", {{1.0, 1}}, 1}};
  const auto report = evaluate(cases);
  CHECK(report.recall.mean == 1.0);
  CHECK(report.recall.max == 1.0);
  CHECK(report.froc.mean == 1.0);
  CHECK(report.num_gt == 3);
}

TEST_CASE("conventions") {
  SUBCASE("no point reaches the lowest precision level") {
    const std::vector<PrPoint> curve{point(0.05, 0.9), point(0.02, 1.0)};
    CHECK(mean_recall(curve).mean == 0.0);
    CHECK(mean_recall(curve).max == 0.0);
  }
  SUBCASE("an empty selection has precision one and recall zero") {
    const auto curve = pr_sweep(fixtures::two_case_detections(), std::vector<double>{0.95});
    CHECK(curve[0].precision == 1.0);
    CHECK(curve[0].recall == 0.0);
  }
  SUBCASE("no FP level reached gives zero recall") {
    CHECK(froc(std::vector<PrPoint>{point(0.1, 0.8, 9.0)}).mean == 0.0);
  }
  SUBCASE("invalid datasets") {
    CHECK_THROWS(pr_sweep(std::vector<CaseDetections>{}));
    CHECK_THROWS(pr_sweep(std::vector<CaseDetections>{{"a", {{0.5, 0}}, 0}}));
  }
}

TEST_CASE("properties on random detections") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const auto cases = random_cases(seed);
    std::uint32_t gt = 0;
    for (const auto& c : cases) gt += c.gt_count;
    if (gt == 0) continue;
    const auto curve = pr_sweep(cases);
    for (std::size_t k = 1; k < curve.size(); ++k) {
      REQUIRE(curve[k].recall <= curve[k - 1].recall);
      REQUIRE(curve[k].fps_per_patient <= curve[k - 1].fps_per_patient);
    }
    const auto r = mean_recall(curve);
    for (std::size_t k = 1; k < r.recall_at.size(); ++k) REQUIRE(r.recall_at[k] <= r.recall_at[k - 1]);
    REQUIRE(r.mean <= r.max + 1e-15);
    REQUIRE((r.mean >= 0.0 && r.max <= 1.0));

    // A strictly increasing map of the confidences leaves every summary unchanged.
    auto rescaled = cases;
    for (auto& c : rescaled)
      for (auto& d : c.detections) d.confidence = 0.1 + 0.5 * d.confidence * d.confidence;
    const auto a = evaluate(cases);
    const auto b = evaluate(rescaled);
    REQUIRE(a.recall.mean == b.recall.mean);
    REQUIRE(a.recall.max == b.recall.max);
    REQUIRE(a.froc.recall_at == b.froc.recall_at);
  }
}

TEST_CASE("matched instances feed the evaluation") {
  const VolumeGrid g{{10, 10, 4}, {1, 1, 1}, {}};
  LabelVolume gt(g);
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y) gt.at(x, y, 0) = 1;
  ScalarVolume p(g);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = gt[i] ? 0.8f : 0.0f;
  const auto inst = extract_instances(p, {}, "x");
  const auto det = make_case_detections("x", inst, match_hits(inst, gt));
  CHECK(det.gt_count == 1);
  REQUIRE(det.detections.size() == 1);
  CHECK(det.detections[0].gt_id == 1);
  CHECK(det.detections[0].confidence == doctest::Approx(0.8));
}

TEST_CASE("report serialisation") {
  const auto report = evaluate(fixtures::two_case_detections());
  const auto doc = nlohmann::json::parse(report_to_json(report));
  CHECK(doc["num_cases"] == 2);
  CHECK(doc["num_predictions"] == 5);
  CHECK(doc["points"].size() == 5);
  CHECK(doc["froc_at"].contains("3"));
  CHECK(doc["mRecall"].get<double>() == report.recall.mean);

  std::istringstream csv(curve_to_csv(report.curve));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "threshold,precision,recall,fps_per_patient");
  int rows = 0;
  while (std::getline(csv, line)) ++rows;
  CHECK(rows == 5);
}
