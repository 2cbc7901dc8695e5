#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <span>
#include <vector>

#include "ambiflow/heatmap.hpp"
#include "ambiflow/nd/autodiff.hpp"

namespace ambiflow::losses {

struct LossWeights {
  double mmd = 10.0;
  double det = 4.0;
  double mb = 4.0;
  double hm = 750.0;
  /// L_gen enters the objective unweighted; exposed so it can be switched off.
  double gen = 1.0;
  std::size_t k = 5;
  double sigma_t = 2.1;
  double mm_per_px = 10.0;

  void validate() const;
};

/// Bandwidths of the inverse multiquadratic kernel mixture.
inline const std::vector<double> kDefaultBandwidths = {0.0025, 0.04, 0.81};

/// Mean over rows of ||y - y_hat||_1.
nd::Var l2d(const nd::Var& y, const nd::Var& y_hat);

/// sum_b b / (b + ||v - v_hat||^2).
double imq_kernel(std::span<const double> v, std::span<const double> v_hat,
                  std::span<const double> bandwidths = kDefaultBandwidths);
/// Kernel matrix K_ij = phi(a_i, b_j).
nd::Var imq_kernel_matrix(const nd::Var& a, const nd::Var& b,
                          std::span<const double> bandwidths = kDefaultBandwidths);

/// Unbiased squared MMD between the row sets V and V_hat (n rows each).
nd::Var mmd_unbiased(const nd::Var& v, const nd::Var& v_hat,
                     std::span<const double> bandwidths = kDefaultBandwidths);

/// Mean over rows of ||x - x_det||_1.
nd::Var l_det(const nd::Var& x, const nd::Var& x_det);

/// Mean per joint position error between two flat 3J poses, in input units.
double mpjpe_flat(std::span<const double> a, std::span<const double> b);

/// Indices of the k hypotheses (rows of `hyps`) with lowest MPJPE to x;
/// ties resolved by lower index.
std::vector<std::size_t> select_top_k(const nd::Tensor& hyps, std::span<const double> x, std::size_t k);

/// Generalized best-of-M loss for one pose: L1 between x (1 x 3J) and the
/// mean of the k best of the hypotheses (M x 3J).
nd::Var l_mb(const nd::Var& hyps, const nd::Var& x, std::size_t k);
/// Batched form: `hyps` holds `per_sample` consecutive rows per row of x;
/// result is averaged over the batch.
nd::Var l_mb_batch(const nd::Var& hyps, const nd::Var& x, std::size_t per_sample, std::size_t k);

/// Masked lower-bound RMSE between a heatmap covariance and a hypothesis
/// covariance, both in px^2.
double l_hm(const Eigen::Matrix2d& heatmap_cov, const Eigen::Matrix2d& hyp_cov, double sigma_t);

/// Heatmap covariances per sample and joint (B x J each), px^2.
struct HeatmapCovariances {
  nd::Tensor s11, s12, s22;
  /// 1 where the fitted Gaussian is uncertain (some std above sigma_t).
  nd::Tensor mask(double sigma_t) const;
  static HeatmapCovariances from_gaussians(std::span<const std::vector<heatmap::Gaussian2D>> per_sample);
};

/// L_HM averaged over samples and joints. `hyps` holds `per_sample`
/// consecutive 3D hypotheses (metres, [x, y, z] per joint) per sample; their
/// x/y covariance uses the (n - 1) estimator and is converted to px^2.
nd::Var l_hm_batch(const nd::Var& hyps, std::size_t per_sample, const HeatmapCovariances& covs,
                   const LossWeights& weights);

struct LossParts {
  nd::Var l2d, gen, mmd, det, mb, hm;
};

/// L_2D + L_gen + lambda_MMD L_MMD + lambda_det L_det + lambda_MB L_MB + lambda_HM L_HM;
/// undefined parts count as zero.
nd::Var total_nf_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace ambiflow::losses
