#include <doctest.h>

#include <cmath>

#include "distgate/loss.hpp"
#include "distgate/rng.hpp"

using namespace distgate;

namespace {

const VolumeGrid kGrid{{4, 4, 4}, {1.0, 1.0, 2.5}, {}};

GatingWeights weights_from(const std::vector<float>& prox) {
  GatingWeights w;
  w.prox = ScalarVolume(kGrid, prox);
  w.dist = ScalarVolume(kGrid);
  for (std::size_t i = 0; i < prox.size(); ++i) w.dist[i] = 1.0f - prox[i];
  return w;
}

GatedLossInput random_input(std::uint64_t seed) {
  Rng rng(seed);
  GatedLossInput in;
  for (auto& p : in.probs) {
    p = ScalarVolume(kGrid);
    for (auto& v : p.data()) v = static_cast<float>(rng.uniform(0.01, 0.99));
  }
  in.labels = BinaryMask(kGrid);
  for (auto& v : in.labels.data()) v = rng.below(2) ? 1 : 0;
  std::vector<float> g(kGrid.voxel_count());
  for (auto& v : g) v = static_cast<float>(rng.uniform());
  in.weights = weights_from(g);
  return in;
}

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Plain reference evaluation of the gated NLL, independent of the library.
double reference_nll(const std::array<std::vector<double>, 2>& p, const std::vector<std::uint8_t>& y,
                     const std::array<std::vector<double>, 2>& g) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    for (int m = 0; m < 2; ++m) {
      const double q = std::clamp(p[m][i], 1e-7, 1.0 - 1e-7);
      s -= g[m][i] * (y[i] ? std::log(q) : std::log(1.0 - q));
    }
  }
  return s / static_cast<double>(y.size());
}

}  // namespace

TEST_CASE("hand-evaluated single voxel") {
  const VolumeGrid g1{{1, 1, 1}, {1, 1, 1}, {}};
  GatedLossInput in;
  in.probs = {ScalarVolume(g1, 0.5f), ScalarVolume(g1, 0.25f)};
  in.labels = BinaryMask(g1, 1);
  in.weights.prox = ScalarVolume(g1, 0.5f);
  in.weights.dist = ScalarVolume(g1, 0.5f);
  CHECK(gated_nll(in) == doctest::Approx(1.0397).epsilon(1e-4));
  CHECK(gated_nll(in) == doctest::Approx(-(0.5 * std::log(0.5) + 0.5 * std::log(0.25))).epsilon(1e-12));
}

TEST_CASE("perfect prediction costs almost nothing") {
  auto in = random_input(1);
  for (auto& p : in.probs) {
    for (std::size_t i = 0; i < p.size(); ++i) p[i] = in.labels[i] ? 1.0f : 0.0f;
  }
  const double loss = gated_nll(in);
  CHECK(loss >= 0.0);
  CHECK(loss == doctest::Approx(-std::log1p(-1e-7)).epsilon(1e-3));
  const auto grad = gated_nll_grad(in);
  for (const auto& g : grad) {
    for (float v : g.data()) CHECK(std::abs(v) <= 1e-8);
  }
}

TEST_CASE("all weight on one branch reduces to single-branch NLL") {
  auto in = random_input(2);
  in.weights = weights_from(std::vector<float>(kGrid.voxel_count(), 1.0f));
  double single = 0.0;
  for (std::size_t i = 0; i < in.labels.size(); ++i) {
    const double p = in.probs[kProx][i];
    single -= in.labels[i] ? std::log(p) : std::log(1.0 - p);
  }
  single /= static_cast<double>(in.labels.size());
  CHECK(gated_nll(in) == doctest::Approx(single).epsilon(1e-12));
  const auto grad = gated_nll_grad(in);
  for (float v : grad[kDist].data()) CHECK(v == 0.0f);
}

TEST_CASE("matches the reference evaluation") {
  const auto in = random_input(3);
  std::array<std::vector<double>, 2> p, g;
  for (int m = 0; m < 2; ++m) p[m].assign(in.probs[m].data().begin(), in.probs[m].data().end());
  g[0].assign(in.weights.prox.data().begin(), in.weights.prox.data().end());
  g[1].assign(in.weights.dist.data().begin(), in.weights.dist.data().end());
  CHECK(gated_nll(in) == doctest::Approx(reference_nll(p, in.labels.values(), g)).epsilon(1e-12));
}

TEST_CASE("gradient at stationary and ungated voxels") {
  auto in = random_input(4);
  in.probs[kProx][5] = in.labels[5] ? 1.0f : 0.0f;
  in.weights.prox[9] = 0.0f;
  in.weights.dist[9] = 1.0f;
  const auto grad = gated_nll_grad(in);
  CHECK(std::abs(grad[kProx][5]) <= 1e-8);
  CHECK(grad[kProx][9] == 0.0f);
}

TEST_CASE("analytic logit gradient matches central differences") {
  Rng rng(5);
  const std::size_t n = kGrid.voxel_count();
  for (int trial = 0; trial < 10; ++trial) {
    std::array<std::vector<double>, 2> z, p;
    for (int m = 0; m < 2; ++m) {
      z[m].resize(n);
      p[m].resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        z[m][i] = rng.uniform(-4.0, 4.0);
        p[m][i] = sigmoid(z[m][i]);
      }
    }
    std::vector<std::uint8_t> y(n);
    for (auto& v : y) v = rng.below(2) ? 1 : 0;
    std::vector<float> gp(n), gd(n);
    for (std::size_t i = 0; i < n; ++i) {
      gp[i] = static_cast<float>(rng.uniform());
      gd[i] = 1.0f - gp[i];
    }
    const std::array<std::vector<double>, 2> g{std::vector<double>(gp.begin(), gp.end()),
                                               std::vector<double>(gd.begin(), gd.end())};

    const GatedLossView<double> view{{std::span<const double>(p[0]), std::span<const double>(p[1])},
                                     y,
                                     {std::span<const float>(gp), std::span<const float>(gd)}};
    std::array<std::vector<double>, 2> grad{std::vector<double>(n), std::vector<double>(n)};
    gated_nll_grad(view, {std::span<double>(grad[0]), std::span<double>(grad[1])});

    const double h = 1e-3;
    double worst = 0.0;
    for (int m = 0; m < 2; ++m) {
      for (std::size_t i = 0; i < n; ++i) {
        auto eval = [&](double dz) {
          auto q = p;
          q[m][i] = sigmoid(z[m][i] + dz);
          return reference_nll(q, y, g);
        };
        const double numeric = (eval(h) - eval(-h)) / (2.0 * h);
        const double scale = std::max({std::abs(numeric), std::abs(grad[m][i]), 1e-12});
        worst = std::max(worst, std::abs(numeric - grad[m][i]) / scale);
      }
    }
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("properties") {
  SUBCASE("non-negative") {
    for (std::uint64_t s = 10; s < 20; ++s) CHECK(gated_nll(random_input(s)) >= 0.0);
  }
  SUBCASE("linear in the gating weights") {
    auto a = random_input(21);
    auto b = a;
    Rng rng(22);
    for (std::size_t i = 0; i < b.weights.prox.size(); ++i) {
      b.weights.prox[i] = static_cast<float>(rng.uniform());
      b.weights.dist[i] = 1.0f - b.weights.prox[i];
    }
    const double alpha = 0.3;
    auto mix = a;
    for (std::size_t i = 0; i < mix.weights.prox.size(); ++i) {
      mix.weights.prox[i] = static_cast<float>(alpha * a.weights.prox[i] + (1 - alpha) * b.weights.prox[i]);
      mix.weights.dist[i] = static_cast<float>(alpha * a.weights.dist[i] + (1 - alpha) * b.weights.dist[i]);
    }
    CHECK(gated_nll(mix) == doctest::Approx(alpha * gated_nll(a) + (1 - alpha) * gated_nll(b)).epsilon(1e-6));
  }
  SUBCASE("swapping branches leaves the loss unchanged") {
    const auto a = random_input(23);
    auto s = a;
    std::swap(s.probs[0], s.probs[1]);
    std::swap(s.weights.prox, s.weights.dist);
    CHECK(gated_nll(s) == doctest::Approx(gated_nll(a)).epsilon(1e-12));
  }
  SUBCASE("grid mismatch") {
    auto a = random_input(24);
    a.labels = BinaryMask(VolumeGrid{{4, 4, 3}, {1.0, 1.0, 2.5}, {}});
    CHECK_THROWS_AS(gated_nll(a), std::invalid_argument);
    CHECK_THROWS_AS(gated_nll_grad(a), std::invalid_argument);
  }
}
