#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "ambiflow/nd/autodiff.hpp"
#include "ambiflow/nn.hpp"
#include "ambiflow/rng.hpp"

namespace ambiflow::flow {

struct FlowConfig {
  std::size_t joints = 16;
  std::size_t blocks = 8;
  std::size_t subnet_hidden = 1024;
  /// Length of the heatmap condition vector, 6 (J - 3) for the default skeleton.
  std::size_t condition_dim = 78;
  std::size_t encoder_hidden = 256;
  std::size_t encoder_out = 56;
  double clamp_alpha = 2.0;
  std::uint64_t seed = 0;
  /// Zero the last layer of every subnet so the untrained flow maps a pose to
  /// its orthographic projection (y) and its depths (z).
  bool zero_init_last = true;

  std::size_t x_dim() const { return 3 * joints; }
  std::size_t y_dim() const { return 2 * joints; }
  std::size_t z_dim() const { return joints; }
  void validate() const;
};

/// (2 alpha / pi) * atan(r / alpha); maps R onto (-alpha, alpha).
nd::Var soft_clamp(const nd::Var& r, double alpha);
double soft_clamp(double r, double alpha);

/// Affine coupling block with two subnets, each predicting a scale and a
/// translation for one half of the input from the other half and the
/// encoded condition. The condition is concatenated to every subnet input.
class CouplingBlock {
 public:
  CouplingBlock(std::size_t dim, std::size_t cond_dim, std::size_t hidden, double alpha);

  struct Output {
    nd::Var u;        // rows x dim
    nd::Var log_det;  // rows x 1
  };

  /// `c` has rows(u) / repeat rows; row i of c conditions rows
  /// [i*repeat, (i+1)*repeat) of u.
  Output forward(const nd::Var& u, const nd::Var& c, std::size_t repeat = 1) const;
  nd::Var inverse(const nd::Var& v, const nd::Var& c, std::size_t repeat = 1) const;

  std::size_t first_size() const { return d1_; }
  std::size_t second_size() const { return d2_; }
  double alpha() const { return alpha_; }

  /// s1,t1 = subnet1(u_in1, c), s2,t2 = subnet2(u_out2, c).
  nn::TwoLayerMlp subnet1;
  nn::TwoLayerMlp subnet2;

 private:
  struct ScaleShift {
    nd::Var s;
    nd::Var t;
  };
  ScaleShift run_subnet(const nn::TwoLayerMlp& net, const nd::Var& part, const nd::Var& c,
                        std::size_t repeat, std::size_t width) const;

  std::size_t d1_;
  std::size_t d2_;
  double alpha_;
};

class FlowModel {
 public:
  explicit FlowModel(FlowConfig config);

  const FlowConfig& config() const { return config_; }

  /// c = h_theta(c_hat).
  nd::Var encode(const nd::Var& condition) const;

  struct ForwardResult {
    nd::Var y;        // rows x 2J
    nd::Var z;        // rows x J
    nd::Var log_det;  // rows x 1
  };

  /// x -> [y | z] given the raw condition vector.
  ForwardResult forward(const nd::Var& x, const nd::Var& condition) const;
  ForwardResult forward_encoded(const nd::Var& x, const nd::Var& encoded, std::size_t repeat = 1) const;
  /// [y | z] -> x given the raw condition vector.
  nd::Var inverse(const nd::Var& y, const nd::Var& z, const nd::Var& condition) const;
  nd::Var inverse_encoded(const nd::Var& y, const nd::Var& z, const nd::Var& encoded,
                          std::size_t repeat = 1) const;
  /// Per-row log |det dF/dx|, the sum of all clamped scale outputs.
  nd::Var log_abs_det_jacobian(const nd::Var& x, const nd::Var& condition) const;

  std::vector<nd::Var> params() const;
  const std::vector<CouplingBlock>& blocks() const { return blocks_; }
  std::vector<CouplingBlock>& blocks() { return blocks_; }
  const nn::TwoLayerMlp& encoder() const { return encoder_; }
  const std::vector<std::vector<std::size_t>>& permutations() const { return perms_; }
  /// Replaces the permutations (model loading). Each must be a bijection on 3J.
  void set_permutations(std::vector<std::vector<std::size_t>> perms);

 private:
  FlowConfig config_;
  nn::TwoLayerMlp encoder_;
  std::vector<CouplingBlock> blocks_;
  std::vector<std::vector<std::size_t>> perms_;
  std::vector<std::vector<std::size_t>> inverse_perms_;
};

/// M 3D pose hypotheses for one 2D input.
struct HypothesisSet {
  std::size_t joints = 0;
  nd::Tensor poses;    // M x 3J
  nd::Tensor latents;  // M x J
  /// Pose from the all-zero latent vector, 1 x 3J (empty when not requested).
  nd::Tensor z0_pose;
  bool forced_z0 = false;

  std::size_t count() const { return poses.rows(); }
};

/// Draws M latent vectors z ~ N(0, I) and maps [y, z] back to 3D. With
/// `force_z0` every hypothesis uses z = 0.
HypothesisSet sample_hypotheses(const FlowModel& model, const nd::Tensor& y, const nd::Tensor& condition,
                                std::size_t count, Rng& rng, bool include_z0 = true, bool force_z0 = false);

std::vector<std::size_t> random_permutation(std::size_t n, Rng& rng);

}  // namespace ambiflow::flow
