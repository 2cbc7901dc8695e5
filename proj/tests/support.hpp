#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>

#include "ambiflow/nd/autodiff.hpp"
#include "ambiflow/rng.hpp"

namespace test_support {

using ambiflow::Rng;
using ambiflow::nd::Tensor;
using ambiflow::nd::Var;

inline Tensor random_tensor(std::size_t rows, std::size_t cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(rows, cols);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Central differences of a scalar function of one tensor.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double eps = 1e-5) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + eps;
    const double up = f(probe);
    probe[i] = keep - eps;
    const double down = f(probe);
    probe[i] = keep;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

/// Largest |a - b| / max(1, |a|, |b|).
inline double max_relative_error(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double scale = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
    worst = std::max(worst, std::abs(a[i] - b[i]) / scale);
  }
  return worst;
}

/// Analytic gradient of f at x via the autodiff engine.
inline Tensor autodiff_gradient(const std::function<Var(const Var&)>& f, const Tensor& x) {
  Var leaf(x, true);
  ambiflow::nd::backward(f(leaf));
  return leaf.grad();
}

/// Shifts entries of x until every |scale * x - target| is at least `margin`
/// for each listed scale, keeping central differences clear of L1 kinks.
inline Tensor off_l1_kinks(Tensor x, const Tensor& target, std::initializer_list<double> scales,
                           double margin = 1e-3) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    bool near = true;
    while (near) {
      near = false;
      for (double sc : scales) near = near || std::abs(sc * x[i] - target[i]) < margin;
      if (near) x[i] += 3.0 * margin;
    }
  }
  return x;
}

/// Gradient recording stays on: f may itself differentiate (penalty terms).
inline double value_of(const std::function<Var(const Var&)>& f, const Tensor& x) {
  return f(Var(x)).item();
}

inline double gradient_check(const std::function<Var(const Var&)>& f, const Tensor& x, double eps = 1e-5) {
  const Tensor analytic = autodiff_gradient(f, x);
  const Tensor numeric = numeric_gradient([&](const Tensor& t) { return value_of(f, t); }, x, eps);
  return max_relative_error(analytic, numeric);
}

}  // namespace test_support
