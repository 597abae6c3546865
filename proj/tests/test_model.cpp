#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "distgate/model.hpp"
#include "distgate/parallel.hpp"
#include "gradcheck.hpp"

using namespace distgate;

namespace {

std::vector<float> flat(const SegmenterParams& p) {
  std::vector<float> out;
  p.for_each_tensor([&](const std::string&, std::span<const float> t) { out.insert(out.end(), t.begin(), t.end()); });
  return out;
}

FeatureMap<float> random_input(const Dims& d, int channels, std::uint64_t seed) {
  FeatureMap<float> m(d, channels);
  Rng rng(seed);
  for (auto& v : m.data) v = static_cast<float>(rng.normal());
  return m;
}

}  // namespace

TEST_CASE("init_params") {
  SegmenterConfig c;
  c.seed = 11;
  const auto a = init_params(c);
  const auto b = init_params(c);
  CHECK(flat(a) == flat(b));
  c.seed = 12;
  CHECK(flat(init_params(c)) != flat(a));

  a.for_each_tensor([&](const std::string& name, std::span<const float> t) {
    if (name.ends_with("bias")) {
      for (float v : t) CHECK(v == 0.0f);
    }
  });
  // Glorot bound of the first trunk layer: fan_in = 3 * 27, fan_out = 8 * 27.
  const double bound = std::sqrt(6.0 / (3 * 27 + 8 * 27));
  for (float w : a.trunk[0].weights) CHECK(std::abs(w) <= bound);
  CHECK(a.trunk[0].weights.size() == 8 * 3 * 27);
  CHECK(a.heads[0].weights.size() == 8);
  CHECK(a.parameter_count() == (8 * 3 * 27 + 8) + (8 * 8 * 27 + 8) + 2 * (8 + 1));

  SegmenterConfig bad;
  bad.trunk = {{4, 2}};
  CHECK_THROWS(init_params(bad));
  bad.trunk.clear();
  CHECK_THROWS(init_params(bad));
}

TEST_CASE("forward") {
  SUBCASE("zero parameters give probability one half") {
    const auto p = zeros_like(init_params(SegmenterConfig{}));
    const auto s = forward_state(p, random_input({5, 4, 3}, 3, 1));
    for (int m = 0; m < 2; ++m) {
      CHECK(s.probs[m].size() == 60);
      for (float v : s.probs[m]) CHECK(v == 0.5f);
    }
  }
  SUBCASE("output shares the input grid") {
    const VolumeGrid g{{7, 5, 4}, {1.0, 1.0, 2.5}, {3, 4, 5}};
    std::vector<ScalarVolume> ch(3, ScalarVolume(g, 0.3f));
    const auto out = forward(init_params(SegmenterConfig{}), ch);
    CHECK(out.prox.grid() == g);
    CHECK(out.dist.grid() == g);
  }
  SUBCASE("1x1x1 trunk matches a per-voxel hand computation") {
    SegmenterConfig c;
    c.trunk = {{2, 1}};
    auto p = init_params(c);
    p.trunk[0].bias = {0.1f, -0.3f};
    p.heads[0].bias = {0.05f};
    p.heads[1].bias = {-0.2f};
    const auto in = random_input({2, 2, 2}, 3, 2);
    const auto s = forward_state(p, in);
    for (std::size_t i = 0; i < 8; ++i) {
      double h[2];
      for (int oc = 0; oc < 2; ++oc) {
        double a = p.trunk[0].bias[oc];
        for (int ic = 0; ic < 3; ++ic) a += double(p.trunk[0].weights[oc * 3 + ic]) * in.channel(ic)[i];
        h[oc] = std::max(a, 0.0);
      }
      for (int m = 0; m < 2; ++m) {
        const double z = p.heads[m].bias[0] + p.heads[m].weights[0] * h[0] + p.heads[m].weights[1] * h[1];
        CHECK(s.probs[m][i] == doctest::Approx(1.0 / (1.0 + std::exp(-z))).epsilon(1e-6));
      }
    }
  }
  SUBCASE("shape mismatch") {
    const auto p = init_params(SegmenterConfig{});
    CHECK_THROWS_AS(forward_state(p, random_input({4, 4, 4}, 2, 3)), std::invalid_argument);
  }
}

TEST_CASE("backward") {
  SegmenterConfig c;
  c.trunk = {{4, 3}, {3, 3}};
  c.seed = 5;
  const auto p = init_params(c);
  const auto s = forward_state(p, random_input({5, 5, 4}, 3, 6));
  const std::size_t n = s.probs[0].size();
  Rng rng(7);
  std::vector<float> g0(n), g1(n), zero(n, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    g0[i] = static_cast<float>(rng.uniform(-1, 1));
    g1[i] = static_cast<float>(rng.uniform(-1, 1));
  }

  SUBCASE("zero upstream gradient") {
    for (float v : flat(backward(p, s, {std::span<const float>(zero), std::span<const float>(zero)}))) CHECK(v == 0.0f);
  }
  SUBCASE("heads contribute additively to the shared trunk") {
    const auto both = backward(p, s, {std::span<const float>(g0), std::span<const float>(g1)});
    const auto only0 = backward(p, s, {std::span<const float>(g0), std::span<const float>(zero)});
    const auto only1 = backward(p, s, {std::span<const float>(zero), std::span<const float>(g1)});
    for (float v : only0.heads[1].weights) CHECK(v == 0.0f);
    for (float v : only0.heads[1].bias) CHECK(v == 0.0f);
    CHECK(only0.heads[0].weights == both.heads[0].weights);
    for (std::size_t l = 0; l < both.trunk.size(); ++l) {
      for (std::size_t k = 0; k < both.trunk[l].weights.size(); ++k) {
        const double sum = double(only0.trunk[l].weights[k]) + only1.trunk[l].weights[k];
        CHECK(both.trunk[l].weights[k] == doctest::Approx(sum).epsilon(1e-4).scale(1e-3));
      }
    }
  }
  SUBCASE("thread count does not change the result") {
    set_thread_count(1);
    const auto serial = backward(p, s, {std::span<const float>(g0), std::span<const float>(g1)});
    const auto fs1 = forward_state(p, random_input({9, 8, 7}, 3, 8));
    set_thread_count(3);
    const auto threaded = backward(p, s, {std::span<const float>(g0), std::span<const float>(g1)});
    const auto fs3 = forward_state(p, random_input({9, 8, 7}, 3, 8));
    set_thread_count(1);
    CHECK(flat(serial) == flat(threaded));
    CHECK(fs1.probs[0] == fs3.probs[0]);
    CHECK(fs1.probs[1] == fs3.probs[1]);
  }
}

TEST_CASE("loss-through-model gradient matches finite differences") {
  SegmenterConfig c;
  c.trunk = {{4, 3}, {4, 3}};
  c.seed = 1;
  const auto r = gradcheck::check(gradcheck::make_problem(c, {6, 6, 6}, 2));
  CHECK(r.checked > 700);
  CHECK(r.max_rel_error_f32 <= 1e-3);
  CHECK(r.max_rel_error_f64 <= 1e-6);
}

TEST_CASE("shared trunk receives signal from the distal branch") {
  SegmenterConfig c;
  c.trunk = {{4, 3}, {4, 3}};
  auto pr = gradcheck::make_problem(c, {6, 6, 5}, 3);
  const auto before = gradcheck::analytic<double>(pr);
  for (std::size_t i = 0; i < pr.labels.size(); ++i) {
    if (pr.g_dist[i] > 0.5f) pr.labels[i] = pr.labels[i] ? 0 : 1;
  }
  const auto after = gradcheck::analytic<double>(pr);
  double diff = 0.0;
  for (std::size_t k = 0; k < before.trunk[0].weights.size(); ++k) {
    diff = std::max(diff, std::abs(before.trunk[0].weights[k] - after.trunk[0].weights[k]));
  }
  CHECK(diff > 1e-6);
}

TEST_CASE("sgd_step") {
  SegmenterConfig c;
  c.trunk = {{2, 3}};
  const auto p0 = init_params(c);
  auto grads = zeros_like(p0);
  Rng rng(9);
  grads.for_each_tensor([&](const std::string&, std::span<float> t) {
    for (auto& v : t) v = static_cast<float>(rng.uniform(-1, 1));
  });
  const auto g = flat(grads);
  const auto w0 = flat(p0);

  SUBCASE("zero gradient leaves parameters unchanged") {
    auto p = p0;
    auto v = zeros_like(p0);
    sgd_step(p, zeros_like(p0), v, 0.1, 0.9);
    CHECK(flat(p) == w0);
  }
  SUBCASE("no momentum is plain gradient descent") {
    auto p = p0;
    auto v = zeros_like(p0);
    sgd_step(p, grads, v, 0.1, 0.0);
    const auto w = flat(p);
    for (std::size_t i = 0; i < w.size(); ++i) CHECK(w[i] == doctest::Approx(w0[i] - 0.1 * g[i]).epsilon(1e-6));
  }
  SUBCASE("two momentum steps move by lr * g * 2.9") {
    auto p = p0;
    MomentumSgd opt(p, 0.01, 0.9);
    opt.step(p, grads);
    opt.step(p, grads);
    const auto w = flat(p);
    for (std::size_t i = 0; i < w.size(); ++i) {
      // Parameters are float: allow a few ulps of |w| ~ 0.5.
      CHECK(std::abs((double(w0[i]) - w[i]) - 0.01 * g[i] * (1.0 + 1.9)) <= 2e-7);
    }
  }
  SUBCASE("invalid inputs") {
    auto p = p0;
    auto v = zeros_like(p0);
    CHECK_THROWS(sgd_step(p, grads, v, 0.0, 0.9));
    CHECK_THROWS(sgd_step(p, grads, v, 0.1, 1.0));
    auto bad = grads;
    bad.trunk[0].weights[3] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(sgd_step(p, bad, v, 0.1, 0.9), std::runtime_error);
  }
}

TEST_CASE("checkpoint round trip") {
  SegmenterConfig c;
  c.seed = 21;
  c.trunk = {{5, 3}, {3, 1}};
  const auto p = init_params(c);
  const auto dir = std::filesystem::temp_directory_path() / "distgate_test_model";
  std::filesystem::create_directories(dir);
  save_checkpoint(p, 1234, dir / "ckpt");
  const auto back = load_checkpoint(dir / "ckpt");
  CHECK(back.step == 1234);
  CHECK(back.params.config == c);
  CHECK(flat(back.params) == flat(p));
  CHECK_THROWS(load_checkpoint(dir / "absent"));
}
