#include "ambiflow/posedisc.hpp"

#include "ambiflow/error.hpp"

namespace ambiflow::posedisc {

using nd::Var;

Eigen::MatrixXd kcs(std::span<const double> pose, const Skeleton& skeleton) {
  const std::size_t j = skeleton.joints();
  if (pose.size() != 3 * j) throw ShapeError("kcs: pose length must be 3J");
  Eigen::MatrixXd x(3, static_cast<Eigen::Index>(j));
  for (std::size_t i = 0; i < j; ++i)
    for (std::size_t a = 0; a < 3; ++a) x(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(i)) = pose[3 * i + a];
  const Eigen::MatrixXd b = x * skeleton.bone_matrix();
  return b.transpose() * b;
}

KcsLayer::KcsLayer(const Skeleton& skeleton) : bones_(skeleton.bone_count()) {
  const std::size_t j = skeleton.joints();
  for (std::size_t a = 0; a < 3; ++a) {
    nd::Tensor m = nd::Tensor::zeros(3 * j, bones_);
    for (std::size_t k = 0; k < bones_; ++k) {
      m(3 * skeleton.bones[k][1] + a, k) += 1.0;
      m(3 * skeleton.bones[k][0] + a, k) -= 1.0;
    }
    axis_bones_.emplace_back(std::move(m));
  }
  nd::Tensor left = nd::Tensor::zeros(bones_, bones_ * bones_);
  nd::Tensor right = nd::Tensor::zeros(bones_, bones_ * bones_);
  for (std::size_t k = 0; k < bones_; ++k)
    for (std::size_t l = 0; l < bones_; ++l) {
      left(k, k * bones_ + l) = 1.0;
      right(l, k * bones_ + l) = 1.0;
    }
  expand_left_ = Var(std::move(left));
  expand_right_ = Var(std::move(right));
}

Var KcsLayer::operator()(const Var& poses) const {
  Var psi;
  for (std::size_t a = 0; a < 3; ++a) {
    Var b = nd::matmul(poses, axis_bones_[a]);
    Var outer = nd::mul(nd::matmul(b, expand_left_), nd::matmul(b, expand_right_));
    psi = a == 0 ? outer : nd::add(psi, outer);
  }
  return psi;
}

Discriminator::Discriminator(const Skeleton& skeleton, DiscriminatorConfig config)
    : config_(config), pose_dim_(3 * skeleton.joints()), kcs_(skeleton) {
  const std::size_t h = config_.hidden;
  kcs1_ = nn::Linear(kcs_.output_dim(), h);
  kcs2_ = nn::Linear(h, h);
  pose1_ = nn::Linear(pose_dim_, h);
  pose2_ = nn::Linear(h, h);
  merge_ = nn::Linear(2 * h, h);
  out_ = nn::Linear(h, 1);
  Rng rng(config_.seed, "discriminator-init");
  for (nn::Linear* l : {&kcs1_, &kcs2_, &pose1_, &pose2_, &merge_, &out_}) l->init_kaiming(rng);
}

Var Discriminator::score(const Var& poses) const {
  if (poses.cols() != pose_dim_) throw ShapeError("discriminator: pose dimension mismatch");
  const double a = config_.leaky_slope;
  Var k = nd::leaky_relu(kcs1_(kcs_(poses)), a);
  k = nd::leaky_relu(kcs2_(k), a);
  Var p = nd::leaky_relu(pose1_(poses), a);
  p = nd::leaky_relu(pose2_(p), a);
  Var m = nd::leaky_relu(merge_(nd::concat_cols({k, p})), a);
  return out_(m);
}

std::vector<Var> Discriminator::params() const {
  std::vector<Var> out;
  for (const nn::Linear* l : {&kcs1_, &kcs2_, &pose1_, &pose2_, &merge_, &out_}) {
    out.push_back(l->weight);
    out.push_back(l->bias);
  }
  return out;
}

Var gradient_penalty(const Critic& critic, const nd::Tensor& real, const nd::Tensor& fake, double lambda,
                     std::span<const double> mix) {
  if (real.rows() == 0 || real.size() == 0) throw InvalidArgument("gradient_penalty: empty batch");
  if (!real.same_shape(fake)) throw ShapeError("gradient_penalty: real and fake batches differ in shape");
  if (mix.size() != real.rows()) throw ShapeError("gradient_penalty: one mixing weight per row required");
  nd::Tensor blend = real;
  const std::size_t cols = real.cols();
  for (std::size_t i = 0; i < real.rows(); ++i)
    for (std::size_t j = 0; j < cols; ++j) blend(i, j) = mix[i] * real(i, j) + (1.0 - mix[i]) * fake(i, j);
  Var x(std::move(blend), true);
  Var scores = critic(x);
  Var g = nd::grad(nd::sum(scores), {x}, true)[0];
  Var norms = nd::sqrt(nd::sum_cols(nd::square(g)));
  return nd::scale(nd::mean(nd::square(nd::add_scalar(norms, -1.0))), lambda);
}

Var gradient_penalty(const Critic& critic, const nd::Tensor& real, const nd::Tensor& fake, double lambda,
                     Rng& rng) {
  std::vector<double> mix(real.rows());
  for (double& m : mix) m = rng.uniform();
  return gradient_penalty(critic, real, fake, lambda, mix);
}

DiscLoss disc_loss(const Critic& critic, const nd::Tensor& real, const nd::Tensor& fake, double lambda,
                   Rng& rng) {
  Var w = nd::sub(nd::mean(critic(Var(fake))), nd::mean(critic(Var(real))));
  Var gp = gradient_penalty(critic, real, fake, lambda, rng);
  return {nd::add(w, gp), w, gp};
}

Var gen_loss(const Critic& critic, const Var& fake) { return nd::neg(nd::mean(critic(fake))); }

}  // namespace ambiflow::posedisc
