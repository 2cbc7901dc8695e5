#include <doctest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "ambiflow/error.hpp"
#include "ambiflow/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace ambiflow;
using namespace ambiflow::metrics;
using nd::Tensor;

namespace {

std::vector<double> random_pose(Rng& rng, std::size_t joints = 16, double scale = 300.0) {
  std::vector<double> p(3 * joints);
  for (double& v : p) v = rng.uniform(-scale, scale);
  return p;
}

std::vector<double> similarity(const std::vector<double>& pose, Rng& rng, double s) {
  const Eigen::Matrix3d r =
      Eigen::Quaterniond(rng.normal(), rng.normal(), rng.normal(), rng.normal()).normalized().toRotationMatrix();
  const Eigen::Vector3d t(rng.uniform(-500, 500), rng.uniform(-500, 500), rng.uniform(-500, 500));
  std::vector<double> out(pose.size());
  for (std::size_t j = 0; j < pose.size() / 3; ++j) {
    const Eigen::Vector3d p = s * (r * Eigen::Vector3d(pose[3 * j], pose[3 * j + 1], pose[3 * j + 2])) + t;
    for (int a = 0; a < 3; ++a) out[3 * j + a] = p[a];
  }
  return out;
}

Tensor rows_of(const std::vector<std::vector<double>>& poses) {
  Tensor t = Tensor::zeros(poses.size(), poses[0].size());
  for (std::size_t r = 0; r < poses.size(); ++r) std::copy(poses[r].begin(), poses[r].end(), t.data() + r * t.cols());
  return t;
}

std::vector<double> shifted(std::vector<double> p, double dx, double dy, double dz) {
  for (std::size_t j = 0; j < p.size() / 3; ++j) {
    p[3 * j] += dx;
    p[3 * j + 1] += dy;
    p[3 * j + 2] += dz;
  }
  return p;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("mpjpe hand cases") {
    Rng rng(1);
    const auto x = random_pose(rng);
    CHECK(mpjpe(x, x) == 0.0);
    CHECK(mpjpe(shifted(x, 3, 4, 0), x) == doctest::Approx(5.0));
    const auto y = random_pose(rng);
    std::vector<std::size_t> order(16);
    for (std::size_t i = 0; i < 16; ++i) order[i] = (i * 7) % 16;
    std::vector<double> xp(48), yp(48);
    for (std::size_t i = 0; i < 16; ++i)
      for (int a = 0; a < 3; ++a) {
        xp[3 * i + a] = x[3 * order[i] + a];
        yp[3 * i + a] = y[3 * order[i] + a];
      }
    CHECK(mpjpe(xp, yp) == doctest::Approx(mpjpe(x, y)).epsilon(1e-14));
  }

  TEST_CASE("procrustes removes similarity transforms") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed, "procrustes");
      const auto x = random_pose(rng);
      const auto moved = similarity(x, rng, rng.uniform(0.3, 3.0));
      CHECK(pmpjpe(moved, x) < 1e-9);
      CHECK(pmpjpe(similarity(x, rng, 1.0), x, false) < 1e-9);
    }
    Rng rng(3);
    const auto x = random_pose(rng);
    std::vector<double> doubled = x;
    for (double& v : doubled) v *= 2;
    CHECK(pmpjpe(doubled, x) < 1e-9);
    CHECK(pmpjpe(doubled, x, false) > 1.0);
  }

  TEST_CASE("alignment never increases the squared error") {
    auto sq = [](std::span<const double> a, std::span<const double> b) {
      double s = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
      return s;
    };
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
      Rng rng(seed, "perturb");
      const auto x = random_pose(rng);
      auto noisy = x;
      for (double& v : noisy) v += rng.normal(0.0, 40.0);
      CHECK(sq(procrustes_align(noisy, x), x) <= sq(noisy, x) + 1e-6);
      CHECK(sq(procrustes_align(noisy, x, false), x) <= sq(noisy, x) + 1e-6);
    }
  }

  TEST_CASE("procrustes rejects degenerate poses") {
    std::vector<double> line(48);
    for (std::size_t j = 0; j < 16; ++j) line[3 * j] = static_cast<double>(j);
    Rng rng(2);
    CHECK_THROWS_AS(procrustes_align(line, random_pose(rng)), InvalidArgument);
    CHECK_THROWS_AS(procrustes_align(std::vector<double>(6, 1.0), std::vector<double>(6, 2.0)), InvalidArgument);
  }

  TEST_CASE("pck hand cases") {
    Rng rng(4);
    const auto x = random_pose(rng);
    CHECK(pck(x, x) == 100.0);
    CHECK(pck(shifted(x, 200, 0, 0), x) == 0.0);
    auto half = x;
    for (std::size_t j = 0; j < 8; ++j) half[3 * j + 2] += 200.0;
    CHECK(pck(half, x) == 50.0);
    CHECK(pck(shifted(x, 150.5, 0, 0), x) == 0.0);
    CHECK(pck(shifted(x, 149.5, 0, 0), x) == 100.0);
  }

  TEST_CASE("cps analytic area and Riemann cross-check") {
    Rng rng(5);
    const auto x = random_pose(rng);
    CHECK(cps(x, x) == 300.0);
    CHECK(cps(shifted(x, 100, 0, 0), x) == doctest::Approx(200.0));
    CHECK(cps(shifted(x, 300, 0, 0), x) == 0.0);
    CHECK(cps(shifted(x, 450, 0, 0), x) == 0.0);
    for (int i = 0; i < 200; ++i) {
      auto noisy = x;
      for (double& v : noisy) v += rng.normal(0.0, 60.0);
      const double value = cps(noisy, x);
      CHECK(value >= 0.0);
      CHECK(value <= 300.0);
      CHECK(std::abs(value - oracle::cps_riemann(max_joint_error(noisy, x))) <= 0.5);
    }
  }

  TEST_CASE("best and worst of a hypothesis set") {
    Rng rng(6);
    const auto x = random_pose(rng);
    std::vector<std::vector<double>> hyps = {random_pose(rng), x, random_pose(rng)};
    const Choice best = best_of(rows_of(hyps), x);
    CHECK(best.index == 1);
    CHECK(best.value == 0.0);
    const Choice worst = worst_of(rows_of(hyps), x);
    for (const auto& h : hyps) {
      CHECK(best.value <= mpjpe(h, x));
      CHECK(worst.value >= mpjpe(h, x));
    }
    const Tensor single = rows_of({hyps[0]});
    CHECK(best_of(single, x).value == worst_of(single, x).value);
    const Tensor tied = rows_of({hyps[0], hyps[0]});
    CHECK(best_of(tied, x).index == 0);
    CHECK(worst_of(tied, x).index == 0);
    CHECK_THROWS(best_of(Tensor::zeros(0, 48), x));

    std::vector<std::vector<double>> grow;
    double prev = std::numeric_limits<double>::infinity();
    for (int m = 0; m < 30; ++m) {
      grow.push_back(random_pose(rng));
      const double v = best_of(rows_of(grow), x, Metric::pmpjpe).value;
      CHECK(v <= prev);
      prev = v;
    }
  }

  TEST_CASE("hypothesis spread") {
    Rng rng(7);
    const auto x = random_pose(rng);
    const Spread same = hypothesis_spread(rows_of({x, x, x}));
    for (const auto& s : same.stddev) CHECK(s.norm() < 1e-9);
    const double a = 37.0;
    const Spread depth = hypothesis_spread(rows_of({shifted(x, 0, 0, a), shifted(x, 0, 0, -a)}));
    for (const auto& s : depth.stddev) {
      CHECK(s[0] == doctest::Approx(0.0));
      CHECK(s[1] == doctest::Approx(0.0));
      CHECK(s[2] == doctest::Approx(a * std::sqrt(2.0)));
    }
    std::vector<std::vector<double>> many;
    for (int i = 0; i < 20; ++i) many.push_back(random_pose(rng));
    const Spread s = hypothesis_spread(rows_of(many));
    for (const auto& c : s.xy_covariance) {
      CHECK(c(0, 1) == c(1, 0));
      CHECK(Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(c).eigenvalues().minCoeff() >= -1e-9);
    }
    CHECK_THROWS(hypothesis_spread(rows_of({x})));
  }

  TEST_CASE("noise baseline") {
    Rng rng(8);
    const auto z0 = random_pose(rng);
    std::vector<heatmap::Gaussian2D> flat(16);
    for (auto& g : flat) g.s11 = g.s12 = g.s22 = 0.0;
    const Tensor still = noise_baseline(z0, flat, 10, 0.0, rng);
    for (std::size_t r = 0; r < 10; ++r)
      for (std::size_t k = 0; k < 48; ++k) CHECK(still(r, k) == z0[k]);

    std::vector<heatmap::Gaussian2D> gs(16);
    for (auto& g : gs) {
      g.s11 = rng.uniform(2, 30);
      g.s22 = rng.uniform(2, 30);
      g.s12 = 0.4 * std::sqrt(g.s11 * g.s22);
    }
    const std::size_t m = 10000;
    const Tensor noisy = noise_baseline(z0, gs, m, 50.0, rng);
    const Spread s = hypothesis_spread(noisy);
    for (std::size_t j = 0; j < 16; ++j) {
      const Eigen::Matrix2d expected = gs[j].covariance() * 100.0;
      CHECK(std::abs(s.xy_covariance[j](0, 0) - expected(0, 0)) < 0.1 * expected(0, 0));
      CHECK(std::abs(s.xy_covariance[j](1, 1) - expected(1, 1)) < 0.1 * expected(1, 1));
      CHECK(std::abs(s.xy_covariance[j](0, 1) - expected(0, 1)) < 0.1 * expected(0, 0));
      CHECK(std::abs(s.stddev[j][2] - 50.0) < 5.0);
    }

    const auto truth = random_pose(rng);
    const Tensor with_clean = noise_baseline(z0, gs, 50, 50.0, rng, 10.0, true);
    for (std::size_t k = 0; k < 48; ++k) CHECK(with_clean(0, k) == z0[k]);
    CHECK(best_of(with_clean, truth).value <= mpjpe(z0, truth));
  }

  TEST_CASE("hip centering") {
    Rng rng(9);
    const auto x = random_pose(rng);
    const auto c = hip_center(x);
    CHECK(c[0] == 0.0);
    CHECK(c[1] == 0.0);
    CHECK(c[2] == 0.0);
    CHECK(hip_center(c) == c);
  }
}
