#include "ambiflow/flow.hpp"

#include <cmath>
#include <numbers>
#include <numeric>
#include <string>

#include "ambiflow/error.hpp"

namespace ambiflow::flow {

using nd::Var;

void FlowConfig::validate() const {
  if (joints < 1) throw ConfigError("flow: joint count must be positive");
  if (blocks < 1) throw ConfigError("flow: at least one coupling block is required");
  if (subnet_hidden < 1 || encoder_hidden < 1 || encoder_out < 1 || condition_dim < 1) {
    throw ConfigError("flow: layer sizes must be positive");
  }
  if (!(clamp_alpha > 0.0)) throw ConfigError("flow: clamp alpha must be > 0");
}

Var soft_clamp(const Var& r, double alpha) {
  if (!(alpha > 0.0)) throw InvalidArgument("soft_clamp: alpha must be > 0");
  return nd::scale(nd::arctan(nd::scale(r, 1.0 / alpha)), 2.0 * alpha / std::numbers::pi);
}

double soft_clamp(double r, double alpha) {
  if (!(alpha > 0.0)) throw InvalidArgument("soft_clamp: alpha must be > 0");
  return 2.0 * alpha / std::numbers::pi * std::atan(r / alpha);
}

// ---------------------------------------------------------------------------

CouplingBlock::CouplingBlock(std::size_t dim, std::size_t cond_dim, std::size_t hidden, double alpha)
    : d1_(dim / 2), d2_(dim - dim / 2), alpha_(alpha) {
  if (dim < 2) throw InvalidArgument("coupling block needs at least two dimensions");
  if (!(alpha > 0.0)) throw InvalidArgument("coupling block: alpha must be > 0");
  subnet1 = nn::TwoLayerMlp(d1_ + cond_dim, hidden, 2 * d2_);
  subnet2 = nn::TwoLayerMlp(d2_ + cond_dim, hidden, 2 * d1_);
}

CouplingBlock::ScaleShift CouplingBlock::run_subnet(const nn::TwoLayerMlp& net, const Var& part,
                                                    const Var& c, std::size_t repeat,
                                                    std::size_t width) const {
  const std::size_t cond_dim = net.hidden.in_features() - width;
  if (c.cols() != cond_dim) {
    throw ShapeError("coupling block: condition has " + std::to_string(c.cols()) + " columns, expected " +
                     std::to_string(cond_dim));
  }
  if (c.rows() * repeat != part.rows()) throw ShapeError("coupling block: condition row count mismatch");
  // [part, c] W + b, with the condition half evaluated once per distinct row.
  const Var& w = net.hidden.weight;
  Var pre = nd::matmul(part, nd::slice_rows(w, 0, width));
  Var cond = nd::add(nd::matmul(c, nd::slice_rows(w, width, cond_dim)), net.hidden.bias);
  if (repeat > 1) cond = nd::repeat_rows(cond, repeat);
  Var out = net.output(nd::relu(nd::add(pre, cond)));
  const std::size_t half = out.cols() / 2;
  return {soft_clamp(nd::slice_cols(out, 0, half), alpha_), nd::slice_cols(out, half, half)};
}

CouplingBlock::Output CouplingBlock::forward(const Var& u, const Var& c, std::size_t repeat) const {
  if (u.cols() != d1_ + d2_) {
    throw ShapeError("coupling_forward: input has " + std::to_string(u.cols()) + " columns, expected " +
                     std::to_string(d1_ + d2_));
  }
  Var u1 = nd::slice_cols(u, 0, d1_);
  Var u2 = nd::slice_cols(u, d1_, d2_);
  auto [s1, t1] = run_subnet(subnet1, u1, c, repeat, d1_);
  Var v2 = nd::add(nd::mul(u2, nd::exp(s1)), t1);
  auto [s2, t2] = run_subnet(subnet2, v2, c, repeat, d2_);
  Var v1 = nd::add(nd::mul(u1, nd::exp(s2)), t2);
  return {nd::concat_cols({v1, v2}), nd::add(nd::sum_cols(s1), nd::sum_cols(s2))};
}

Var CouplingBlock::inverse(const Var& v, const Var& c, std::size_t repeat) const {
  if (v.cols() != d1_ + d2_) {
    throw ShapeError("coupling_inverse: input has " + std::to_string(v.cols()) + " columns, expected " +
                     std::to_string(d1_ + d2_));
  }
  Var v1 = nd::slice_cols(v, 0, d1_);
  Var v2 = nd::slice_cols(v, d1_, d2_);
  auto [s2, t2] = run_subnet(subnet2, v2, c, repeat, d2_);
  Var u1 = nd::mul(nd::sub(v1, t2), nd::exp(nd::neg(s2)));
  auto [s1, t1] = run_subnet(subnet1, u1, c, repeat, d1_);
  Var u2 = nd::mul(nd::sub(v2, t1), nd::exp(nd::neg(s1)));
  return nd::concat_cols({u1, u2});
}

// ---------------------------------------------------------------------------

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[rng.below(i)]);
  return p;
}

FlowModel::FlowModel(FlowConfig config) : config_(config) {
  config_.validate();
  const std::size_t dim = config_.x_dim();
  encoder_ = nn::TwoLayerMlp(config_.condition_dim, config_.encoder_hidden, config_.encoder_out);
  Rng init(config_.seed, "flow-init");
  Rng enc_rng = init.derive("encoder");
  encoder_.hidden.init_kaiming(enc_rng);
  encoder_.output.init_kaiming(enc_rng);

  std::vector<std::vector<std::size_t>> perms;
  for (std::size_t k = 0; k < config_.blocks; ++k) {
    CouplingBlock block(dim, config_.encoder_out, config_.subnet_hidden, config_.clamp_alpha);
    Rng r = init.derive("block", k);
    block.subnet1.hidden.init_kaiming(r);
    block.subnet2.hidden.init_kaiming(r);
    if (config_.zero_init_last) {
      block.subnet1.output.init_zero();
      block.subnet2.output.init_zero();
    } else {
      block.subnet1.output.init_kaiming(r);
      block.subnet2.output.init_kaiming(r);
    }
    blocks_.push_back(std::move(block));
    Rng pr(config_.seed, "permutation", k);
    perms.push_back(random_permutation(dim, pr));
  }
  // The last permutation completes the chain so that the composite sends the
  // image-plane coordinates of every joint to the y slot (in joint order) and
  // the depths to the z slot; a model with zero coupling outputs is then the
  // orthographic projection.
  std::vector<std::size_t> source(dim);
  std::iota(source.begin(), source.end(), std::size_t{0});
  for (std::size_t k = 0; k + 1 < perms.size(); ++k) {
    std::vector<std::size_t> next(dim);
    for (std::size_t i = 0; i < dim; ++i) next[i] = source[perms[k][i]];
    source = std::move(next);
  }
  std::vector<std::size_t> position(dim);
  for (std::size_t i = 0; i < dim; ++i) position[source[i]] = i;
  const std::size_t j = config_.joints;
  for (std::size_t i = 0; i < j; ++i) {
    perms.back()[2 * i] = position[3 * i];
    perms.back()[2 * i + 1] = position[3 * i + 1];
    perms.back()[2 * j + i] = position[3 * i + 2];
  }
  set_permutations(std::move(perms));
}

void FlowModel::set_permutations(std::vector<std::vector<std::size_t>> perms) {
  const std::size_t dim = config_.x_dim();
  if (perms.size() != blocks_.size()) throw InvalidArgument("one permutation per block is required");
  inverse_perms_.assign(perms.size(), std::vector<std::size_t>(dim));
  for (std::size_t k = 0; k < perms.size(); ++k) {
    if (perms[k].size() != dim) throw InvalidArgument("permutation has wrong length");
    std::vector<bool> seen(dim, false);
    for (std::size_t i = 0; i < dim; ++i) {
      const std::size_t p = perms[k][i];
      if (p >= dim || seen[p]) throw InvalidArgument("permutation is not a bijection");
      seen[p] = true;
      inverse_perms_[k][p] = i;
    }
  }
  perms_ = std::move(perms);
}

Var FlowModel::encode(const Var& condition) const {
  if (condition.cols() != config_.condition_dim) {
    throw ShapeError("flow: condition has " + std::to_string(condition.cols()) + " columns, expected " +
                     std::to_string(config_.condition_dim));
  }
  return encoder_(condition);
}

FlowModel::ForwardResult FlowModel::forward(const Var& x, const Var& condition) const {
  return forward_encoded(x, encode(condition));
}

FlowModel::ForwardResult FlowModel::forward_encoded(const Var& x, const Var& encoded,
                                                    std::size_t repeat) const {
  if (x.cols() != config_.x_dim()) {
    throw ShapeError("flow_forward: pose has " + std::to_string(x.cols()) + " columns, expected " +
                     std::to_string(config_.x_dim()));
  }
  Var u = x;
  Var log_det;
  for (std::size_t k = 0; k < blocks_.size(); ++k) {
    auto out = blocks_[k].forward(u, encoded, repeat);
    log_det = k == 0 ? out.log_det : nd::add(log_det, out.log_det);
    u = nd::gather_cols(out.u, perms_[k]);
  }
  return {nd::slice_cols(u, 0, config_.y_dim()), nd::slice_cols(u, config_.y_dim(), config_.z_dim()),
          log_det};
}

Var FlowModel::inverse(const Var& y, const Var& z, const Var& condition) const {
  return inverse_encoded(y, z, encode(condition));
}

Var FlowModel::inverse_encoded(const Var& y, const Var& z, const Var& encoded, std::size_t repeat) const {
  if (y.cols() != config_.y_dim() || z.cols() != config_.z_dim()) {
    throw ShapeError("flow_inverse: expected y with " + std::to_string(config_.y_dim()) +
                     " and z with " + std::to_string(config_.z_dim()) + " columns");
  }
  if (y.rows() != z.rows()) throw ShapeError("flow_inverse: y and z row counts differ");
  Var u = nd::concat_cols({y, z});
  for (std::size_t k = blocks_.size(); k-- > 0;) {
    u = nd::gather_cols(u, inverse_perms_[k]);
    u = blocks_[k].inverse(u, encoded, repeat);
  }
  return u;
}

Var FlowModel::log_abs_det_jacobian(const Var& x, const Var& condition) const {
  return forward(x, condition).log_det;
}

std::vector<Var> FlowModel::params() const {
  std::vector<Var> out;
  encoder_.params(out);
  for (const auto& b : blocks_) {
    b.subnet1.params(out);
    b.subnet2.params(out);
  }
  return out;
}

HypothesisSet sample_hypotheses(const FlowModel& model, const nd::Tensor& y, const nd::Tensor& condition,
                                std::size_t count, Rng& rng, bool include_z0, bool force_z0) {
  if (count == 0) throw InvalidArgument("sample_hypotheses: M must be at least 1");
  const auto& cfg = model.config();
  if (y.size() != cfg.y_dim()) throw ShapeError("sample_hypotheses: y has wrong length");
  nd::NoGradGuard no_grad;
  Var yv(y.reshaped({1, cfg.y_dim()}));
  Var c = model.encode(Var(condition.reshaped({1, condition.size()})));

  HypothesisSet set;
  set.joints = cfg.joints;
  set.forced_z0 = force_z0;
  set.latents = nd::Tensor::zeros(count, cfg.z_dim());
  if (!force_z0) {
    for (double& v : set.latents.values()) v = rng.normal();
  }
  Var poses = model.inverse_encoded(nd::repeat_rows(yv, count), Var(set.latents), c, count);
  set.poses = poses.value();
  if (include_z0) {
    set.z0_pose = model.inverse_encoded(yv, Var(nd::Tensor::zeros(1, cfg.z_dim())), c).value();
  }
  return set;
}

}  // namespace ambiflow::flow
