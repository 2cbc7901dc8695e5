#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "ambiflow/error.hpp"
#include "ambiflow/flow.hpp"
#include "ambiflow/model_io.hpp"
#include "support.hpp"

using namespace ambiflow;
using namespace ambiflow::nd;
using flow::FlowConfig;
using flow::FlowModel;
using test_support::random_tensor;

namespace {

FlowConfig small_config(std::uint64_t seed, bool zero_last = false) {
  FlowConfig c;
  c.joints = 4;
  c.blocks = 4;
  c.subnet_hidden = 16;
  c.condition_dim = 6;
  c.encoder_hidden = 8;
  c.encoder_out = 5;
  c.seed = seed;
  c.zero_init_last = zero_last;
  return c;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

/// Weights at the scale of a trained model; initializer-scale random output
/// layers compound to values near 1e6 over eight blocks.
void randomize_weights(const FlowModel& model, Rng& rng, double stddev = 0.05) {
  for (Var p : model.params())
    for (double& v : p.mutable_value().values()) v = rng.normal(0.0, stddev);
}

}  // namespace

TEST_SUITE("flow") {
  TEST_CASE("soft clamp") {
    CHECK(flow::soft_clamp(0.0, 2.0) == 0.0);
    CHECK(flow::soft_clamp(2.0, 2.0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(std::abs(flow::soft_clamp(1e6, 2.0)) < 2.0);
    CHECK(std::abs(flow::soft_clamp(-1e6, 2.0)) < 2.0);
    double prev = -2.0;
    for (double r = -50.0; r <= 50.0; r += 0.5) {
      const double v = flow::soft_clamp(r, 2.0);
      CHECK(v > prev);
      prev = v;
    }
    CHECK_THROWS_AS(flow::soft_clamp(1.0, 0.0), InvalidArgument);
    CHECK(flow::soft_clamp(Var::scalar(2.0), 2.0).item() == doctest::Approx(1.0));
  }

  TEST_CASE("coupling block with zero subnets is the identity") {
    flow::CouplingBlock block(48, 56, 32, 2.0);
    block.subnet1.output.init_zero();
    block.subnet2.output.init_zero();
    Rng rng(1);
    Rng init(2);
    block.subnet1.hidden.init_kaiming(init);
    block.subnet2.hidden.init_kaiming(init);
    const Var u(random_tensor(5, 48, rng));
    const Var c(random_tensor(5, 56, rng));
    const auto out = block.forward(u, c);
    CHECK(out.u.value() == u.value());
    for (double v : out.log_det.value().values()) CHECK(v == 0.0);
    CHECK(block.inverse(u, c).value() == u.value());
  }

  TEST_CASE("coupling block roundtrip and scale bound") {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      Rng rng(seed, "coupling");
      flow::CouplingBlock block(48, 56, 32, 2.0);
      block.subnet1.hidden.init_kaiming(rng);
      block.subnet1.output.init_kaiming(rng);
      block.subnet2.hidden.init_kaiming(rng);
      block.subnet2.output.init_kaiming(rng);
      // Large inputs push the raw scales far past the clamp.
      const Var u(random_tensor(3, 48, rng, -20, 20));
      const Var c(random_tensor(3, 56, rng, -20, 20));
      const auto out = block.forward(u, c);
      CHECK(max_abs_diff(block.inverse(out.u, c).value(), u.value()) < 1e-9);
      for (double v : out.log_det.value().values()) CHECK(std::abs(v) < 2.0 * 48);
    }
    CHECK(flow::CouplingBlock(48, 56, 32, 2.0).first_size() == 24);
    CHECK_THROWS(flow::CouplingBlock(48, 56, 32, 2.0).forward(Var(Tensor::zeros(1, 47)), Var(Tensor::zeros(1, 56))));
  }

  TEST_CASE("default architecture") {
    FlowConfig c;
    CHECK(c.joints == 16);
    CHECK(c.blocks == 8);
    CHECK(c.subnet_hidden == 1024);
    CHECK(c.condition_dim == 78);
    CHECK(c.encoder_hidden == 256);
    CHECK(c.encoder_out == 56);
    CHECK(c.clamp_alpha == 2.0);
    c.subnet_hidden = 32;
    const FlowModel model(c);
    REQUIRE(model.blocks().size() == 8);
    CHECK(model.blocks()[0].subnet1.output.out_features() == 48);
    CHECK(model.blocks()[0].subnet1.hidden.in_features() == 24 + 56);
    CHECK(model.encoder().output.out_features() == 56);
    for (const auto& p : model.permutations()) {
      std::vector<std::size_t> sorted = p;
      std::sort(sorted.begin(), sorted.end());
      for (std::size_t i = 0; i < sorted.size(); ++i) CHECK(sorted[i] == i);
    }
    FlowConfig bad = c;
    bad.clamp_alpha = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("full model roundtrip in both directions") {
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      FlowConfig cfg;
      cfg.subnet_hidden = 64;
      cfg.seed = seed;
      const FlowModel model(cfg);
      Rng rng(seed, "roundtrip");
      randomize_weights(model, rng);
      const Var x(random_tensor(4, 48, rng, -2, 2));
      const Var cond(random_tensor(4, 78, rng, -2, 2));
      NoGradGuard guard;
      const auto f = model.forward(x, cond);
      CHECK(max_abs_diff(model.inverse(f.y, f.z, cond).value(), x.value()) < 1e-7);
      const Var y(random_tensor(4, 32, rng, -2, 2));
      const Var z(random_tensor(4, 16, rng, -2, 2));
      const auto back = model.forward(model.inverse(y, z, cond), cond);
      CHECK(max_abs_diff(back.y.value(), y.value()) < 1e-7);
      CHECK(max_abs_diff(back.z.value(), z.value()) < 1e-7);
    }
  }

  TEST_CASE("fresh model is deterministic and finite") {
    FlowConfig cfg;
    cfg.subnet_hidden = 64;
    cfg.seed = 11;
    const FlowModel a(cfg), b(cfg);
    Rng rng(5);
    Tensor x = Tensor::zeros(1000, 48);
    for (double& v : x.values()) v = rng.normal();
    const Var cond(random_tensor(1000, 78, rng));
    NoGradGuard guard;
    const auto fa = a.forward(Var(x), cond);
    const auto fb = b.forward(Var(x), cond);
    CHECK(fa.y.value() == fb.y.value());
    CHECK(fa.z.value() == fb.z.value());
    CHECK(fa.y.value().all_finite());
    CHECK(a.permutations() == b.permutations());
  }

  TEST_CASE("dimension mismatch raises") {
    const FlowModel model(small_config(1));
    CHECK_THROWS(model.forward(Var(Tensor::zeros(1, 11)), Var(Tensor::zeros(1, 6))));
    CHECK_THROWS(model.inverse(Var(Tensor::zeros(1, 8)), Var(Tensor::zeros(1, 3)), Var(Tensor::zeros(1, 6))));
    CHECK_THROWS(model.forward(Var(Tensor::zeros(1, 12)), Var(Tensor::zeros(1, 5))));
  }

  TEST_CASE("log-det is zero for zero subnets and matches the brute-force Jacobian") {
    FlowConfig zero = small_config(3, true);
    zero.joints = 2;
    const FlowModel identity(zero);
    Rng rng(9);
    const Var x0(random_tensor(3, 6, rng));
    const Var c0(random_tensor(3, 6, rng));
    const Var zero_log_det = identity.log_abs_det_jacobian(x0, c0);
    for (double v : zero_log_det.value().values()) CHECK(v == 0.0);

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      FlowConfig cfg = small_config(seed);
      cfg.joints = 2;
      const FlowModel model(cfg);
      Rng r(seed, "jacobian");
      const Tensor x = random_tensor(1, 6, r);
      const Var cond(random_tensor(1, 6, r));
      NoGradGuard guard;
      auto out = [&](const Tensor& t) {
        const auto f = model.forward(Var(t), cond);
        return concat_cols({f.y, f.z}).value();
      };
      Eigen::Matrix<double, 6, 6> jac;
      const double eps = 1e-6;
      for (int j = 0; j < 6; ++j) {
        Tensor up = x, down = x;
        up[j] += eps;
        down[j] -= eps;
        const Tensor a = out(up), b = out(down);
        for (int i = 0; i < 6; ++i) jac(i, j) = (a[i] - b[i]) / (2 * eps);
      }
      const double brute = std::log(std::abs(jac.determinant()));
      CHECK(std::abs(model.log_abs_det_jacobian(Var(x), cond).item() - brute) < 1e-3);
      CHECK(std::abs(model.forward(Var(x), cond).log_det.item() - brute) < 1e-3);
    }
  }

  TEST_CASE("output depends on the condition") {
    FlowConfig cfg = small_config(4);
    const FlowModel model(cfg);
    Rng rng(4);
    const Var x(random_tensor(2, 12, rng));
    Var cond(random_tensor(2, 6, rng), true);
    const auto f = model.forward(x, cond);
    backward(sum(f.y) + sum(f.z));
    double norm = 0.0;
    for (double v : cond.grad().values()) norm += v * v;
    CHECK(norm > 0.0);
  }

  TEST_CASE("sampling") {
    FlowConfig cfg = small_config(6);
    const FlowModel model(cfg);
    Rng rng(6);
    const Tensor y = random_tensor(1, 8, rng);
    const Tensor cond = random_tensor(1, 6, rng);

    Rng draw(1);
    const auto forced = flow::sample_hypotheses(model, y, cond, 1, draw, true, true);
    NoGradGuard guard;
    const Tensor direct =
        model.inverse(Var(y), Var(Tensor::zeros(1, 4)), Var(cond)).value();
    CHECK(forced.poses == direct);
    CHECK(forced.z0_pose == direct);

    Rng many(2);
    const std::size_t m = 4000;
    const auto set = flow::sample_hypotheses(model, y, cond, m, many);
    CHECK(set.count() == m);
    for (std::size_t k = 0; k < 4; ++k) {
      double mean = 0.0;
      for (std::size_t r = 0; r < m; ++r) mean += set.latents(r, k);
      CHECK(std::abs(mean / m) < 3.0 / std::sqrt(static_cast<double>(m)));
    }
    CHECK(set.poses.rows() == m);
    CHECK_FALSE(set.poses == Tensor(set.poses.shape(), set.poses[0]));
    CHECK_THROWS_AS(flow::sample_hypotheses(model, y, cond, 0, many), InvalidArgument);
  }

  TEST_CASE("serialization preserves weights and permutations bit-exactly") {
    FlowConfig cfg = small_config(8);
    const FlowModel model(cfg);
    binio::Writer w;
    model_io::encode_model(w, model, nullptr);
    binio::Reader r(w.bytes());
    Skeleton skel;
    skel.names.resize(4);
    const auto loaded = model_io::decode_model(r, skel);
    CHECK(loaded.flow.permutations() == model.permutations());
    const auto a = model.params(), b = loaded.flow.params();
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].value() == b[i].value());
    CHECK_FALSE(loaded.disc.has_value());
  }

  TEST_CASE("permutation helper is a bijection") {
    Rng rng(3);
    auto p = flow::random_permutation(48, rng);
    std::sort(p.begin(), p.end());
    for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == i);
  }
}
