#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <numbers>

#include "ambiflow/error.hpp"
#include "ambiflow/heatmap.hpp"
#include "ambiflow/rng.hpp"
#include "ambiflow/skeleton.hpp"

using namespace ambiflow;
using namespace ambiflow::heatmap;

namespace {

Gaussian2D from_sigmas(double a, double mx, double my, double sx, double sy, double rho) {
  Gaussian2D g;
  g.amplitude = a;
  g.mean_x = mx;
  g.mean_y = my;
  g.s11 = sx * sx;
  g.s22 = sy * sy;
  g.s12 = rho * sx * sy;
  return g;
}

Gaussian2D random_spd(Rng& rng, double cx, double cy) {
  const double s1 = rng.uniform(1.0, 8.0), s2 = rng.uniform(1.0, 8.0);
  const double angle = rng.uniform(0.0, std::numbers::pi);
  const double c = std::cos(angle), s = std::sin(angle);
  Gaussian2D g;
  g.amplitude = rng.uniform(0.5, 2.0);
  g.mean_x = cx + rng.uniform(-3.0, 3.0);
  g.mean_y = cy + rng.uniform(-3.0, 3.0);
  g.s11 = c * c * s1 * s1 + s * s * s2 * s2;
  g.s22 = s * s * s1 * s1 + c * c * s2 * s2;
  g.s12 = c * s * (s1 * s1 - s2 * s2);
  return g;
}

}  // namespace

TEST_SUITE("heatmap") {
  TEST_CASE("synthesis hand values") {
    const Gaussian2D g = Gaussian2D::isotropic(1.5, 20, 12, 2.0);
    const Heatmap map = synthesize_heatmap(g, 40, 30);
    CHECK(map.at(20, 12) == doctest::Approx(1.5));
    CHECK(map.at(22, 12) == doctest::Approx(1.5 * std::exp(-0.5)));
    CHECK(map.at(20, 10) == doctest::Approx(1.5 * std::exp(-0.5)));
    CHECK(argmax(map) == std::pair<std::size_t, std::size_t>{20, 12});
  }

  TEST_CASE("synthesized mass matches the continuous integral") {
    Rng rng(5);
    for (int i = 0; i < 20; ++i) {
      const Gaussian2D g = random_spd(rng, 50, 50);
      const Heatmap map = synthesize_heatmap(g, 100, 100);
      double mass = 0.0;
      for (double v : map.values) mass += v;
      const double expected = g.amplitude * 2.0 * std::numbers::pi * std::sqrt(g.covariance().determinant());
      CHECK(std::abs(mass - expected) / expected < 0.01);
    }
  }

  TEST_CASE("synthesis rejects a non-SPD covariance") {
    Gaussian2D g = Gaussian2D::isotropic(1, 5, 5, 2);
    g.s12 = 10.0;
    CHECK_FALSE(g.is_spd());
    CHECK_THROWS_AS(synthesize_heatmap(g, 10, 10), InvalidArgument);
  }

  TEST_CASE("initial guess uses the ground-truth variance") {
    const Gaussian2D g = Gaussian2D::initial(3, 4);
    CHECK(g.amplitude == 1.0);
    CHECK(g.s11 == 4.0);
    CHECK(g.s22 == 4.0);
    CHECK(g.s12 == 0.0);
    CHECK(kSigmaGt == 2.0);
  }

  TEST_CASE("fit recovers an axis-aligned Gaussian") {
    const Gaussian2D truth = from_sigmas(1.0, 32, 20, 3, 5, 0);
    const Heatmap map = synthesize_heatmap(truth, 64, 48);
    const FitResult fit = fit_gaussian(map, Gaussian2D::initial(32, 20));
    CHECK(fit.converged);
    CHECK_FALSE(fit.warning());
    CHECK(std::abs(fit.gaussian.mean_x - 32) < 0.01);
    CHECK(std::abs(fit.gaussian.mean_y - 20) < 0.01);
    CHECK(std::abs(fit.gaussian.s11 - 9) < 0.05);
    CHECK(std::abs(fit.gaussian.s12) < 0.05);
    CHECK(std::abs(fit.gaussian.s22 - 25) < 0.05);
  }

  TEST_CASE("fit roundtrip over random SPD draws") {
    Rng rng(17, "fit-roundtrip");
    for (int i = 0; i < 200; ++i) {
      CAPTURE(i);
      const Gaussian2D truth = random_spd(rng, 48, 48);
      const Heatmap map = synthesize_heatmap(truth, 96, 96);
      const auto [col, row] = argmax(map);
      const FitResult fit = fit_gaussian(map, Gaussian2D::initial(col, row));
      const Gaussian2D& g = fit.gaussian;
      CHECK(g.is_spd());
      CHECK(std::abs(g.mean_x - truth.mean_x) < 0.01);
      CHECK(std::abs(g.mean_y - truth.mean_y) < 0.01);
      CHECK(std::abs(g.s11 - truth.s11) < 0.05);
      CHECK(std::abs(g.s12 - truth.s12) < 0.05);
      CHECK(std::abs(g.s22 - truth.s22) < 0.05);
    }
  }

  TEST_CASE("bimodal map converges to one mode and flags the residual") {
    Heatmap map = synthesize_heatmap(Gaussian2D::isotropic(1.0, 15, 20, 2.5), 80, 40);
    const Heatmap other = synthesize_heatmap(Gaussian2D::isotropic(1.0, 60, 20, 2.5), 80, 40);
    for (std::size_t i = 0; i < map.values.size(); ++i) map.values[i] += other.values[i];
    const FitResult fit = fit_gaussian(map, Gaussian2D::initial(15, 20));
    CHECK(fit.high_residual);
    CHECK(fit.warning());
    CHECK(fit.relative_residual > FitOptions{}.residual_threshold);
    CHECK(std::abs(fit.gaussian.mean_x - 15) < 1.0);
    CHECK(fit.gaussian.is_spd());
  }

  TEST_CASE("all-zero map is rejected") {
    const Heatmap map(16, 16);
    CHECK_THROWS_AS(fit_gaussian(map, Gaussian2D::initial(8, 8)), InvalidArgument);
  }

  TEST_CASE("fitted covariance stays SPD on a near-degenerate map") {
    Heatmap map(32, 32);
    for (std::size_t c = 0; c < 32; ++c) map.at(c, 16) = 1.0;
    const FitResult fit = fit_gaussian(map, Gaussian2D::initial(16, 16));
    CHECK(fit.gaussian.is_spd());
    CHECK(std::abs(fit.gaussian.s12 - fit.gaussian.covariance()(1, 0)) == 0.0);
  }

  TEST_CASE("condition vector") {
    const Skeleton skel = Skeleton::human16();
    std::vector<Gaussian2D> gs;
    for (std::size_t j = 0; j < 16; ++j) gs.push_back(from_sigmas(1.0 + j, 10.0 * j, 5.0 * j, 2, 2, 0.1));
    const auto c = build_condition(gs, 16, skel.hips);
    REQUIRE(c.size() == 78);
    std::size_t k = 0;
    for (std::size_t j = 0; j < 16; ++j) {
      if (skel.is_hip(j)) continue;
      CHECK(c[k + 0] == gs[j].amplitude);
      CHECK(c[k + 1] == gs[j].mean_x);
      CHECK(c[k + 2] == gs[j].mean_y);
      CHECK(c[k + 3] == gs[j].s11);
      CHECK(c[k + 4] == gs[j].s12);
      CHECK(c[k + 5] == gs[j].s22);
      k += 6;
    }
    for (std::size_t h : skel.hips)
      for (std::size_t i = 0; i < c.size(); i += 6) CHECK(c[i] != gs[h].amplitude);
    CHECK(build_condition(gs, 16, skel.hips) == c);
    gs.pop_back();
    CHECK_THROWS(build_condition(gs, 16, skel.hips));
  }

  TEST_CASE("condition vector follows a joint relabelling") {
    // Swapping two non-hip joints swaps their six-coefficient slots.
    const Skeleton skel = Skeleton::human16();
    Rng rng(2);
    std::vector<Gaussian2D> gs;
    for (std::size_t j = 0; j < 16; ++j) gs.push_back(random_spd(rng, 100, 100));
    auto swapped = gs;
    std::swap(swapped[5], swapped[9]);
    const auto a = build_condition(gs, 16, skel.hips);
    auto b = build_condition(swapped, 16, skel.hips);
    auto slot = [&](std::size_t joint) {
      std::size_t k = 0;
      for (std::size_t j = 0; j < joint; ++j) k += skel.is_hip(j) ? 0 : 1;
      return 6 * k;
    };
    for (int i = 0; i < 6; ++i) std::swap(b[slot(5) + i], b[slot(9) + i]);
    CHECK(a == b);
  }

  TEST_CASE("ambiguity threshold is strict") {
    std::vector<Gaussian2D> gs(16, Gaussian2D::isotropic(1, 0, 0, 2));
    CHECK_FALSE(is_ambiguous(gs));
    gs[7] = from_sigmas(1, 0, 0, 5.1, 2, 0);
    CHECK(is_ambiguous(gs));
    gs[7] = from_sigmas(1, 0, 0, 5.0, 5.0, 0);
    CHECK_FALSE(is_ambiguous(gs));
    gs[7] = from_sigmas(1, 0, 0, 2.0, 5.2, 0);
    CHECK(is_ambiguous(gs));
  }

  TEST_CASE("heatmap file roundtrip and fit CSV") {
    HeatmapStack stack{24, 16, {}};
    for (int j = 0; j < 3; ++j) stack.joints.push_back(synthesize_heatmap(Gaussian2D::isotropic(1, 5 + 4 * j, 8, 2), 24, 16));
    const auto path = std::filesystem::temp_directory_path() / "ambiflow_heatmaps_test.bin";
    write_heatmaps(path, stack);
    const HeatmapStack back = read_heatmaps(path);
    CHECK(back.width == 24);
    CHECK(back.height == 16);
    REQUIRE(back.joints.size() == 3);
    for (std::size_t j = 0; j < 3; ++j)
      for (std::size_t i = 0; i < back.joints[j].values.size(); ++i)
        CHECK(back.joints[j].values[i] == doctest::Approx(stack.joints[j].values[i]).epsilon(1e-6));
    std::filesystem::remove(path);
    CHECK(fits_csv_header().find("mean_x") != std::string::npos);
    const FitResult fit = fit_gaussian(stack.joints[0], Gaussian2D::initial(5, 8));
    CHECK(fits_csv_row(0, fit).rfind("0,", 0) == 0);
  }
}
