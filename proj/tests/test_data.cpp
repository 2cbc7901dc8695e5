#include <doctest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "ambiflow/binio.hpp"
#include "ambiflow/data.hpp"
#include "ambiflow/error.hpp"
#include "ambiflow/heatmap.hpp"

using namespace ambiflow;
using namespace ambiflow::data;

namespace {

GenConfig small_config(std::size_t count, double occlusion, std::uint64_t seed = 1) {
  GenConfig c;
  c.count = count;
  c.occlusion_rate = occlusion;
  c.seed = seed;
  return c;
}

std::filesystem::path temp_file(const char* name) { return std::filesystem::temp_directory_path() / name; }

double bone_length(const std::vector<double>& pose, std::size_t a, std::size_t b) {
  const double dx = pose[3 * a] - pose[3 * b], dy = pose[3 * a + 1] - pose[3 * b + 1], dz = pose[3 * a + 2] - pose[3 * b + 2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("projection") {
    Camera unit;
    unit.focal = 1.0;
    unit.cx = unit.cy = 0.0;
    const std::vector<double> p = {1.0, 2.0, 5.0};
    CHECK(project(p, unit) == std::vector<double>{1.0, 2.0});

    Camera pin;
    pin.orthographic = false;
    pin.focal = 1000.0;
    pin.cx = pin.cy = 500.0;
    CHECK(project(std::vector<double>{0, 0, 2}, pin) == std::vector<double>{500.0, 500.0});
    const auto near = project(std::vector<double>{0.3, -0.2, 2}, pin);
    const auto far = project(std::vector<double>{0.3, -0.2, 4}, pin);
    CHECK(far[0] - 500.0 == doctest::Approx((near[0] - 500.0) / 2));
    CHECK(far[1] - 500.0 == doctest::Approx((near[1] - 500.0) / 2));
    CHECK_THROWS_AS(project(std::vector<double>{0, 0, 0}, pin), InvalidArgument);
    CHECK_THROWS_AS(project(std::vector<double>{0, 0, -1}, pin), InvalidArgument);
  }

  TEST_CASE("clean dataset has ground-truth sigmas and exact projections") {
    const Skeleton skel = Skeleton::human16();
    const auto samples = generate_dataset(small_config(20, 0.0), skel);
    REQUIRE(samples.size() == 20);
    for (const auto& s : samples) {
      CHECK(s.joints() == 16);
      const auto p = project(s.pose3d, s.camera);
      for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(p[i] - s.pose2d[i]) < 1e-9);
      for (std::size_t j = 0; j < 16; ++j) {
        CHECK_FALSE(s.occluded[j]);
        CHECK(std::abs(s.gaussians[j].sigma_x() - 2.0) < 0.01);
        CHECK(std::abs(s.gaussians[j].sigma_y() - 2.0) < 0.01);
        // Fitting the synthesized map recovers the projection point.
        CHECK(std::abs(s.gaussians[j].mean_x - s.pose2d[2 * j]) < 0.05);
        CHECK(std::abs(s.gaussians[j].mean_y - s.pose2d[2 * j + 1]) < 0.05);
      }
      CHECK_FALSE(heatmap::is_ambiguous(s.gaussians));
    }
  }

  TEST_CASE("occluded joints get inflated sigmas") {
    const Skeleton skel = Skeleton::human16();
    GenConfig cfg = small_config(60, 1.0, 3);
    cfg.fit_heatmaps = false;
    const auto samples = generate_dataset(cfg, skel);
    for (const auto& s : samples) {
      std::size_t count = 0;
      for (std::size_t j = 0; j < 16; ++j) {
        if (!s.occluded[j]) {
          CHECK(s.gaussians[j].sigma_x() == doctest::Approx(2.0));
          continue;
        }
        ++count;
        CHECK_FALSE(skel.is_hip(j));
        const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(s.gaussians[j].covariance());
        CHECK(std::sqrt(eig.eigenvalues()[0]) >= 4.0 - 1e-9);
        CHECK(std::sqrt(eig.eigenvalues()[1]) <= 10.0 + 1e-9);
      }
      CHECK(count >= 1);
      CHECK(count <= cfg.max_occluded);
    }
  }

  TEST_CASE("bone lengths are constant across the dataset") {
    const Skeleton skel = Skeleton::human16();
    GenConfig cfg = small_config(50, 0.3, 4);
    cfg.fit_heatmaps = false;
    for (const auto& s : generate_dataset(cfg, skel))
      for (std::size_t b = 0; b < skel.bone_count(); ++b)
        CHECK(bone_length(s.pose3d, skel.bones[b][0], skel.bones[b][1]) == doctest::Approx(skel.bone_lengths[b]).epsilon(1e-12));
  }

  TEST_CASE("generation is deterministic and validates its input") {
    const Skeleton skel = Skeleton::human16();
    const GenConfig cfg = small_config(10, 0.5, 9);
    const auto a = generate_dataset(cfg, skel), b = generate_dataset(cfg, skel);
    CHECK(a == b);
    CHECK(generate_sample(cfg, skel, 7) == a[7]);
    const auto pa = temp_file("ambiflow_det_a.bin"), pb = temp_file("ambiflow_det_b.bin");
    write_dataset(pa, a);
    write_dataset(pb, b);
    CHECK(binio::read_file(pa) == binio::read_file(pb));
    std::filesystem::remove(pa);
    std::filesystem::remove(pb);

    Skeleton broken = skel;
    broken.bone_lengths[3] = 0.0;
    CHECK_THROWS_AS(generate_dataset(cfg, broken), InvalidArgument);
    broken = skel;
    broken.bone_lengths[0] = -0.1;
    CHECK_THROWS_AS(generate_dataset(cfg, broken), InvalidArgument);
    GenConfig bad = cfg;
    bad.occlusion_rate = 1.5;
    CHECK_THROWS(generate_dataset(bad, skel));
  }

  TEST_CASE("2D normalization") {
    const std::vector<double> pose = {10, 20, 30, 50, -4, 8, 16, 2};
    Norm2D stats;
    const auto n = normalize_2d(pose, &stats);
    double mx = 0, my = 0, ss = 0;
    for (std::size_t i = 0; i < n.size(); i += 2) {
      mx += n[i];
      my += n[i + 1];
      ss += n[i] * n[i] + n[i + 1] * n[i + 1];
    }
    CHECK(std::abs(mx) < 1e-12);
    CHECK(std::abs(my) < 1e-12);
    CHECK(ss / n.size() == doctest::Approx(1.0));
    const auto back = denormalize_2d(n, stats);
    for (std::size_t i = 0; i < pose.size(); ++i) CHECK(std::abs(back[i] - pose[i]) < 1e-12);
    CHECK_THROWS_AS(normalize_2d(std::vector<double>{3, 4, 3, 4, 3, 4}), InvalidArgument);

    Camera cam;
    Norm2D fixed;
    const auto net = network_input_2d(pose, cam, &fixed);
    CHECK(fixed.std == cam.focal);
    const auto net_back = denormalize_2d(net, fixed);
    for (std::size_t i = 0; i < pose.size(); ++i) CHECK(std::abs(net_back[i] - pose[i]) < 1e-12);
  }

  TEST_CASE("orthographic network input equals the centred 3D x/y") {
    const Skeleton skel = Skeleton::human16();
    GenConfig cfg = small_config(5, 0.0, 5);
    cfg.fit_heatmaps = false;
    const auto samples = generate_dataset(cfg, skel);
    const Prepared p = prepare(samples, skel);
    for (std::size_t s = 0; s < samples.size(); ++s)
      for (std::size_t j = 0; j < 16; ++j) {
        CHECK(p.y(s, 2 * j) == doctest::Approx(p.x(s, 3 * j)).epsilon(1e-9));
        CHECK(p.y(s, 2 * j + 1) == doctest::Approx(p.x(s, 3 * j + 1)).epsilon(1e-9));
      }
    CHECK(p.condition.cols() == 78);
  }

  TEST_CASE("3D normalization and hip centering") {
    const Skeleton skel = Skeleton::human16();
    const auto s = generate_sample(small_config(1, 0.0), skel, 0);
    const auto n = normalize_3d(s.pose3d);
    for (int a = 0; a < 3; ++a) {
      double m = 0;
      for (std::size_t j = 0; j < 16; ++j) m += n[3 * j + a];
      CHECK(std::abs(m) < 1e-12);
    }
    const auto h = hip_center(s.pose3d);
    CHECK(h[0] == 0.0);
    CHECK(h[1] == 0.0);
    CHECK(h[2] == 0.0);
    CHECK(hip_center(h) == h);
  }

  TEST_CASE("dataset file roundtrip and error classes") {
    const Skeleton skel = Skeleton::human16();
    GenConfig cfg = small_config(6, 0.5, 2);
    cfg.fit_heatmaps = false;
    const auto samples = generate_dataset(cfg, skel);
    const auto path = temp_file("ambiflow_data_roundtrip.bin");
    write_dataset(path, samples);
    CHECK(read_dataset(path) == samples);

    write_dataset(path, std::vector<Sample>{});
    CHECK(read_dataset(path).empty());

    write_dataset(path, samples);
    auto bytes = binio::read_file(path);
    auto corrupt = bytes;
    corrupt[bytes.size() / 2] ^= 0x40;
    binio::write_file(path, corrupt);
    CHECK_THROWS_AS(read_dataset(path), ChecksumError);

    auto truncated = bytes;
    truncated.resize(bytes.size() - 9);
    binio::write_file(path, truncated);
    CHECK_THROWS_AS(read_dataset(path), TruncatedError);

    auto versioned = bytes;
    versioned[4] = 99;
    binio::write_file(path, versioned);
    CHECK_THROWS_AS(read_dataset(path), VersionError);

    auto magic = bytes;
    magic[0] = 'X';
    binio::write_file(path, magic);
    CHECK_THROWS_AS(read_dataset(path), FormatError);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(read_dataset(path), IoError);
  }
}
