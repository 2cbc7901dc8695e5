#include "ambiflow/nd/optim.hpp"

#include <algorithm>
#include <cmath>

#include "ambiflow/error.hpp"

namespace ambiflow::nd {

void clip_gradients(Tensor& grad, double lo, double hi) {
  if (lo > hi) throw InvalidArgument("clip_gradients: lo > hi");
  for (double& g : grad.values()) g = std::clamp(g, lo, hi);
}

void clip_gradients(std::vector<Var>& params, double lo, double hi) {
  if (lo > hi) throw InvalidArgument("clip_gradients: lo > hi");
  for (auto& p : params) clip_gradients(p.mutable_grad(), lo, hi);
}

void zero_grads(std::vector<Var>& params) {
  for (auto& p : params) p.zero_grad();
}

void adam_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, double lr, double beta1,
               double beta2, std::uint64_t t, double eps) {
  if (param.size() != grad.size() || param.size() != m.size() || param.size() != v.size()) {
    throw ShapeError("adam_step: state and gradient shapes must match the parameter");
  }
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  double* p = param.data();
  const double* g = grad.data();
  double* pm = m.data();
  double* pv = v.data();
  for (std::size_t i = 0; i < param.size(); ++i) {
    pm[i] = beta1 * pm[i] + (1.0 - beta1) * g[i];
    pv[i] = beta2 * pv[i] + (1.0 - beta2) * g[i] * g[i];
    const double mhat = pm[i] / c1;
    const double vhat = pv[i] / c2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

Adam::Adam(std::vector<Var> params, AdamOptions options)
    : params_(std::move(params)), options_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.value().shape());
    v_.emplace_back(p.value().shape());
  }
}

void Adam::step() {
  ++t_;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Var& p = params_[i];
    if (p.grad().size() != p.value().size()) p.zero_grad();
    adam_step(p.mutable_value(), p.grad(), m_[i], v_[i], options_.lr, options_.beta1,
              options_.beta2, t_, options_.eps);
  }
}

void Adam::restore(std::uint64_t t, std::vector<Tensor> m, std::vector<Tensor> v) {
  if (m.size() != params_.size() || v.size() != params_.size()) {
    throw ShapeError("Adam::restore: state count does not match parameter count");
  }
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (m[i].size() != params_[i].value().size() || v[i].size() != params_[i].value().size()) {
      throw ShapeError("Adam::restore: state shape mismatch");
    }
  }
  t_ = t;
  m_ = std::move(m);
  v_ = std::move(v);
}

}  // namespace ambiflow::nd
