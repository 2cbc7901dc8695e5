#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "ambiflow/nd/autodiff.hpp"
#include "ambiflow/nn.hpp"
#include "ambiflow/rng.hpp"
#include "ambiflow/skeleton.hpp"

namespace ambiflow::posedisc {

/// Kinematic Chain Space matrix Psi = B^T B of one pose, where the columns
/// of B are the bone vectors. Diagonal: squared bone lengths; off-diagonal:
/// inner products between bones. Pose layout is [x0, y0, z0, x1, ...].
Eigen::MatrixXd kcs(std::span<const double> pose, const Skeleton& skeleton);

/// Differentiable batched KCS layer: (B x 3J) -> (B x (J-1)^2), row-major Psi.
/// Built from matmul and elementwise products only, so it supports
/// second-order gradients.
class KcsLayer {
 public:
  explicit KcsLayer(const Skeleton& skeleton);
  nd::Var operator()(const nd::Var& poses) const;
  std::size_t output_dim() const { return bones_ * bones_; }

 private:
  std::size_t bones_;
  std::vector<nd::Var> axis_bones_;  // 3 constants, (3J x (J-1))
  nd::Var expand_left_;              // (J-1) x (J-1)^2
  nd::Var expand_right_;
};

struct DiscriminatorConfig {
  std::size_t hidden = 100;
  double leaky_slope = 0.2;
  std::uint64_t seed = 0;
};

/// Critic scoring 3D poses: a KCS branch and a direct-pose branch, each two
/// fully connected layers, merged by a fully connected layer and a linear
/// scalar output.
class Discriminator {
 public:
  Discriminator(const Skeleton& skeleton, DiscriminatorConfig config = {});

  /// (B x 3J) -> (B x 1).
  nd::Var score(const nd::Var& poses) const;
  nd::Var operator()(const nd::Var& poses) const { return score(poses); }

  std::vector<nd::Var> params() const;
  const DiscriminatorConfig& config() const { return config_; }
  std::size_t pose_dim() const { return pose_dim_; }

 private:
  DiscriminatorConfig config_;
  std::size_t pose_dim_;
  KcsLayer kcs_;
  nn::Linear kcs1_, kcs2_, pose1_, pose2_, merge_, out_;
};

using Critic = std::function<nd::Var(const nd::Var&)>;

/// lambda * mean_i (||grad D(x~_i)||_2 - 1)^2 on x~ = e real + (1 - e) fake
/// with e ~ U[0, 1] per sample. Differentiable w.r.t. the critic weights.
nd::Var gradient_penalty(const Critic& critic, const nd::Tensor& real, const nd::Tensor& fake,
                         double lambda, Rng& rng);
/// Same with explicit interpolation weights (one per row).
nd::Var gradient_penalty(const Critic& critic, const nd::Tensor& real, const nd::Tensor& fake,
                         double lambda, std::span<const double> mix);

struct DiscLoss {
  nd::Var total;
  nd::Var wasserstein;  // mean D(fake) - mean D(real)
  nd::Var penalty;
};

/// WGAN-GP critic objective; fakes are treated as constants.
DiscLoss disc_loss(const Critic& critic, const nd::Tensor& real, const nd::Tensor& fake, double lambda,
                   Rng& rng);

/// L_gen = -mean D(fake).
nd::Var gen_loss(const Critic& critic, const nd::Var& fake);

}  // namespace ambiflow::posedisc
