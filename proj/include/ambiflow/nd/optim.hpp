#pragma once

#include <cstdint>
#include <vector>

#include "ambiflow/nd/autodiff.hpp"

namespace ambiflow::nd {

/// Elementwise clamp of every gradient into [lo, hi].
void clip_gradients(std::vector<Var>& params, double lo = -15.0, double hi = 15.0);
void clip_gradients(Tensor& grad, double lo = -15.0, double hi = 15.0);

void zero_grads(std::vector<Var>& params);

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.9;
  double eps = 1e-8;
};

/// Adam with bias correction. Holds first/second moment estimates for a
/// fixed list of parameters.
class Adam {
 public:
  Adam(std::vector<Var> params, AdamOptions options = {});

  /// Applies one update using the gradients currently stored on the params.
  void step();
  void set_lr(double lr) { options_.lr = lr; }
  double lr() const { return options_.lr; }
  std::uint64_t steps() const { return t_; }

  const std::vector<Var>& params() const { return params_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }
  void restore(std::uint64_t t, std::vector<Tensor> m, std::vector<Tensor> v);

 private:
  std::vector<Var> params_;
  AdamOptions options_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::uint64_t t_ = 0;
};

/// Single Adam update on raw arrays; `t` is the 1-based step index.
void adam_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, double lr, double beta1,
               double beta2, std::uint64_t t, double eps = 1e-8);

}  // namespace ambiflow::nd
