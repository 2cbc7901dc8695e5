#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "ambiflow/data.hpp"
#include "ambiflow/error.hpp"
#include "ambiflow/flow.hpp"
#include "ambiflow/nd/optim.hpp"
#include "ambiflow/posedisc.hpp"
#include "support.hpp"

using namespace ambiflow;
using namespace ambiflow::nd;
using posedisc::Critic;
using test_support::random_tensor;

namespace {

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  return q.normalized().toRotationMatrix();
}

std::vector<double> transform(std::span<const double> pose, const Eigen::Matrix3d& r, const Eigen::Vector3d& t,
                              double s) {
  std::vector<double> out(pose.size());
  for (std::size_t j = 0; j < pose.size() / 3; ++j) {
    const Eigen::Vector3d p = s * (r * Eigen::Vector3d(pose[3 * j], pose[3 * j + 1], pose[3 * j + 2])) + t;
    for (int a = 0; a < 3; ++a) out[3 * j + a] = p[a];
  }
  return out;
}

Tensor real_batch(const Skeleton& skel, std::size_t n, std::uint64_t seed) {
  Tensor t = Tensor::zeros(n, 3 * skel.joints());
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(seed, "disc-real", i);
    const auto pose = data::normalize_3d(data::random_world_pose(skel, rng));
    std::copy(pose.begin(), pose.end(), t.data() + i * pose.size());
  }
  return t;
}

/// Finite-difference input-gradient norm oracle for one row.
double fd_grad_norm(const Critic& critic, const Tensor& row) {
  NoGradGuard guard;
  auto f = [&](const Tensor& x) { return critic(Var(x)).item(); };
  const Tensor g = test_support::numeric_gradient(f, row, 1e-6);
  double s = 0.0;
  for (double v : g.values()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST_SUITE("posedisc") {
  TEST_CASE("skeleton structure") {
    const Skeleton skel = Skeleton::human16();
    skel.validate();
    CHECK(skel.joints() == 16);
    CHECK(skel.bone_count() == 15);
    CHECK(skel.parents[0] == -1);
    CHECK(skel.hips == std::vector<std::size_t>{0, 1, 4});
  }

  TEST_CASE("kcs single bone") {
    Skeleton skel;
    skel.names = {"root", "tip"};
    skel.parents = {-1, 0};
    skel.bones = {{0, 1}};
    skel.hips = {};
    skel.bone_lengths = {0.5};
    skel.rest_directions = {Eigen::Vector3d::UnitY()};
    const std::vector<double> pose = {0, 0, 0, 0.3, 0.4, 0.0};
    const auto psi = posedisc::kcs(pose, skel);
    REQUIRE(psi.rows() == 1);
    CHECK(psi(0, 0) == doctest::Approx(0.25));
  }

  TEST_CASE("kcs is a Gram matrix invariant to rigid motion and quadratic in scale") {
    const Skeleton skel = Skeleton::human16();
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed, "kcs");
      const auto pose = data::random_world_pose(skel, rng);
      const Eigen::MatrixXd psi = posedisc::kcs(pose, skel);
      CHECK((psi - psi.transpose()).cwiseAbs().maxCoeff() < 1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(psi);
      CHECK(eig.eigenvalues().minCoeff() > -1e-12);
      for (std::size_t b = 0; b < skel.bone_count(); ++b)
        CHECK(psi(b, b) == doctest::Approx(skel.bone_lengths[b] * skel.bone_lengths[b]).epsilon(1e-9));

      const auto moved = transform(pose, random_rotation(rng), Eigen::Vector3d(1.0, -2.0, 0.5), 1.0);
      CHECK((posedisc::kcs(moved, skel) - psi).cwiseAbs().maxCoeff() < 1e-10);
      const auto scaled = transform(pose, Eigen::Matrix3d::Identity(), Eigen::Vector3d::Zero(), 1.7);
      CHECK((posedisc::kcs(scaled, skel) - 1.7 * 1.7 * psi).cwiseAbs().maxCoeff() < 1e-10);
    }
  }

  TEST_CASE("differentiable kcs layer matches the direct form") {
    const Skeleton skel = Skeleton::human16();
    const posedisc::KcsLayer layer(skel);
    const Tensor poses = real_batch(skel, 3, 4);
    const Var out = layer(Var(poses));
    REQUIRE(out.cols() == 225);
    for (std::size_t r = 0; r < 3; ++r) {
      const auto psi = posedisc::kcs(std::span<const double>(poses.data() + r * 48, 48), skel);
      for (std::size_t a = 0; a < 15; ++a)
        for (std::size_t b = 0; b < 15; ++b) CHECK(out.value()(r, a * 15 + b) == doctest::Approx(psi(a, b)));
    }
  }

  TEST_CASE("score is finite and deterministic") {
    const Skeleton skel = Skeleton::human16();
    const posedisc::Discriminator a(skel, {100, 0.2, 3}), b(skel, {100, 0.2, 3});
    const Tensor poses = real_batch(skel, 8, 1);
    NoGradGuard guard;
    const Var sa = a(Var(poses));
    CHECK(sa.rows() == 8);
    CHECK(sa.cols() == 1);
    CHECK(sa.value().all_finite());
    CHECK(sa.value() == b(Var(poses)).value());
  }

  TEST_CASE("penalty of a constant critic is lambda") {
    const Critic constant = [](const Var& x) { return sum_cols(x) * 0.0 + 1.0; };
    Rng rng(1);
    const Tensor real = random_tensor(4, 6, rng), fake = random_tensor(4, 6, rng);
    CHECK(posedisc::gradient_penalty(constant, real, fake, 10.0, rng).item() == doctest::Approx(10.0));
  }

  TEST_CASE("penalty of a unit-norm linear critic is zero") {
    Rng rng(2);
    Tensor w = random_tensor(6, 1, rng);
    double n = 0.0;
    for (double v : w.values()) n += v * v;
    for (double& v : w.values()) v /= std::sqrt(n);
    const Var weight(w, true);
    const Critic linear = [&](const Var& x) { return matmul(x, weight); };
    const Tensor real = random_tensor(5, 6, rng), fake = random_tensor(5, 6, rng);
    CHECK(posedisc::gradient_penalty(linear, real, fake, 10.0, rng).item() == doctest::Approx(0.0).epsilon(1e-12));
  }

  TEST_CASE("penalty matches a finite-difference gradient norm") {
    const Skeleton skel = Skeleton::human16();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const posedisc::Discriminator disc(skel, {32, 0.2, seed});
      const Critic critic = [&](const Var& x) { return disc(x); };
      const Tensor real = real_batch(skel, 3, seed);
      Rng rng(seed, "fake");
      const Tensor fake = random_tensor(3, 48, rng, -0.5, 0.5);
      const std::vector<double> mix = {0.2, 0.5, 0.9};
      const double value = posedisc::gradient_penalty(critic, real, fake, 10.0, mix).item();
      double oracle = 0.0;
      for (std::size_t r = 0; r < 3; ++r) {
        Tensor row = Tensor::zeros(1, 48);
        for (std::size_t k = 0; k < 48; ++k) row[k] = mix[r] * real(r, k) + (1 - mix[r]) * fake(r, k);
        const double g = fd_grad_norm(critic, row);
        oracle += (g - 1.0) * (g - 1.0);
      }
      oracle *= 10.0 / 3.0;
      CHECK(std::abs(value - oracle) < 1e-3 * std::max(1.0, oracle));
      CHECK(value >= 0.0);
    }
  }

  TEST_CASE("penalty is differentiable in the critic weights") {
    const Skeleton skel = Skeleton::human16();
    const posedisc::Discriminator disc(skel, {16, 0.2, 7});
    const Tensor real = real_batch(skel, 2, 7);
    Rng rng(7);
    const Tensor fake = random_tensor(2, 48, rng, -0.5, 0.5);
    const std::vector<double> mix = {0.3, 0.6};
    auto params = disc.params();
    Var out_weight = params[params.size() - 4];  // merge layer weight
    const Tensor base = out_weight.value();
    auto penalty_at = [&](const Tensor& w) {
      out_weight.mutable_value() = w;
      const Critic critic = [&](const Var& x) { return disc(x); };
      return posedisc::gradient_penalty(critic, real, fake, 10.0, mix);
    };
    zero_grads(params);
    backward(penalty_at(base));
    const Tensor analytic = out_weight.grad();
    const Tensor numeric = test_support::numeric_gradient(
        [&](const Tensor& w) {
          return penalty_at(w).item();
        },
        base);
    out_weight.mutable_value() = base;
    CHECK(test_support::max_relative_error(analytic, numeric) < 1e-4);
  }

  TEST_CASE("empty and mismatched batches are rejected") {
    const Critic linear = [](const Var& x) { return sum_cols(x); };
    Rng rng(1);
    CHECK_THROWS(posedisc::gradient_penalty(linear, Tensor::zeros(0, 6), Tensor::zeros(0, 6), 10.0, rng));
    CHECK_THROWS(posedisc::gradient_penalty(linear, Tensor::zeros(2, 6), Tensor::zeros(3, 6), 10.0, rng));
  }

  TEST_CASE("wgan objectives") {
    const Critic zero = [](const Var& x) { return sum_cols(x) * 0.0; };
    Rng rng(3);
    const Tensor real = random_tensor(4, 6, rng), fake = random_tensor(4, 6, rng);
    const auto d = posedisc::disc_loss(zero, real, fake, 10.0, rng);
    CHECK(d.total.item() == doctest::Approx(10.0));
    CHECK(d.wasserstein.item() == 0.0);
    CHECK(posedisc::gen_loss(zero, Var(fake)).item() == 0.0);

    const Critic sum_critic = [](const Var& x) { return sum_cols(x); };
    Rng r1(4), r2(4);
    const auto forward = posedisc::disc_loss(sum_critic, real, fake, 10.0, r1);
    const auto swapped = posedisc::disc_loss(sum_critic, fake, real, 10.0, r2);
    CHECK(forward.wasserstein.item() == doctest::Approx(-swapped.wasserstein.item()));

    const Tensor higher = [&] {
      Tensor t = fake;
      for (double& v : t.values()) v += 1.0;
      return t;
    }();
    CHECK(posedisc::gen_loss(sum_critic, Var(higher)).item() < posedisc::gen_loss(sum_critic, Var(fake)).item());
  }

  TEST_CASE("critic learns to separate real from fake poses") {
    const Skeleton skel = Skeleton::human16();
    const posedisc::Discriminator disc(skel, {32, 0.2, 5});
    auto params = disc.params();
    Adam opt(params, {1e-3, 0.5, 0.9, 1e-8});
    const Critic critic = [&](const Var& x) { return disc(x); };
    for (int step = 0; step < 60; ++step) {
      const Tensor real = real_batch(skel, 16, 100 + step);
      Rng rng(step, "fake");
      const Tensor fake = random_tensor(16, 48, rng, -0.4, 0.4);
      zero_grads(params);
      backward(posedisc::disc_loss(critic, real, fake, 10.0, rng).total);
      clip_gradients(params);
      opt.step();
    }
    const Tensor real = real_batch(skel, 64, 9999);
    Rng rng(77);
    const Tensor fake = random_tensor(64, 48, rng, -0.4, 0.4);
    NoGradGuard guard;
    CHECK(mean(disc(Var(real))).item() > mean(disc(Var(fake))).item());
  }

  TEST_CASE("a flow update leaves the critic untouched") {
    const Skeleton skel = Skeleton::human16();
    const posedisc::Discriminator disc(skel, {16, 0.2, 1});
    flow::FlowConfig fc;
    fc.subnet_hidden = 16;
    fc.zero_init_last = false;
    const flow::FlowModel model(fc);
    auto flow_params = model.params();
    auto disc_params = disc.params();
    Adam flow_opt(flow_params, {1e-2, 0.5, 0.9, 1e-8});
    std::vector<Tensor> before;
    for (const auto& p : disc_params) before.push_back(p.value());
    Rng rng(3);
    const Var fake = model.inverse(Var(random_tensor(4, 32, rng)), Var(random_tensor(4, 16, rng)),
                                   Var(random_tensor(4, 78, rng)));
    const Critic critic = [&](const Var& x) { return disc(x); };
    zero_grads(flow_params);
    backward(posedisc::gen_loss(critic, fake));
    flow_opt.step();
    for (std::size_t i = 0; i < disc_params.size(); ++i) CHECK(disc_params[i].value() == before[i]);
  }
}
