#pragma once

#include <cstddef>
#include <vector>

#include "ambiflow/nd/autodiff.hpp"
#include "ambiflow/rng.hpp"

namespace ambiflow::nn {

/// y = x W + b with W of shape (in x out) and b of shape (1 x out).
struct Linear {
  nd::Var weight;
  nd::Var bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out);

  std::size_t in_features() const { return weight.rows(); }
  std::size_t out_features() const { return weight.cols(); }
  nd::Var operator()(const nd::Var& x) const;

  /// Uniform Kaiming init for ReLU fan-in, bias in +-1/sqrt(fan_in).
  void init_kaiming(Rng& rng);
  void init_zero();
};

/// Fully connected in -> hidden -> out with a ReLU in between.
struct TwoLayerMlp {
  Linear hidden;
  Linear output;

  TwoLayerMlp() = default;
  TwoLayerMlp(std::size_t in, std::size_t hidden_dim, std::size_t out);

  nd::Var operator()(const nd::Var& x) const;
  void params(std::vector<nd::Var>& out) const;
};

}  // namespace ambiflow::nn
