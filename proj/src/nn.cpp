#include "ambiflow/nn.hpp"

#include <cmath>

namespace ambiflow::nn {

Linear::Linear(std::size_t in, std::size_t out)
    : weight(nd::Tensor::zeros(in, out), true), bias(nd::Tensor::zeros(1, out), true) {}

nd::Var Linear::operator()(const nd::Var& x) const {
  return nd::add(nd::matmul(x, weight), bias);
}

void Linear::init_kaiming(Rng& rng) {
  const double fan_in = static_cast<double>(in_features());
  const double wb = std::sqrt(6.0 / fan_in);
  const double bb = 1.0 / std::sqrt(fan_in);
  for (double& w : weight.mutable_value().values()) w = rng.uniform(-wb, wb);
  for (double& b : bias.mutable_value().values()) b = rng.uniform(-bb, bb);
}

void Linear::init_zero() {
  weight.mutable_value().fill(0.0);
  bias.mutable_value().fill(0.0);
}

TwoLayerMlp::TwoLayerMlp(std::size_t in, std::size_t hidden_dim, std::size_t out)
    : hidden(in, hidden_dim), output(hidden_dim, out) {}

nd::Var TwoLayerMlp::operator()(const nd::Var& x) const {
  return output(nd::relu(hidden(x)));
}

void TwoLayerMlp::params(std::vector<nd::Var>& out) const {
  out.insert(out.end(), {hidden.weight, hidden.bias, output.weight, output.bias});
}

}  // namespace ambiflow::nn
