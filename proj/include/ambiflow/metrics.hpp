#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "ambiflow/heatmap.hpp"
#include "ambiflow/nd/tensor.hpp"
#include "ambiflow/rng.hpp"

namespace ambiflow::metrics {

/// Poses are flat [x0, y0, z0, x1, ...] arrays, lengths in mm unless noted.
using PoseView = std::span<const double>;

double mpjpe(PoseView predicted, PoseView truth);
/// Largest per-joint Euclidean error.
double max_joint_error(PoseView predicted, PoseView truth);

/// Similarity (or rigid, with allow_scale = false) transform of `predicted`
/// minimizing the squared distance to `truth`.
std::vector<double> procrustes_align(PoseView predicted, PoseView truth, bool allow_scale = true);
double pmpjpe(PoseView predicted, PoseView truth, bool allow_scale = true);

/// Percentage of joints with error < threshold.
double pck(PoseView predicted, PoseView truth, double threshold_mm = 150.0);

/// Area under the correct-pose curve over thresholds [0, 300] mm; a pose is
/// correct at threshold t iff every joint error is < t.
double cps(PoseView predicted, PoseView truth, double max_threshold_mm = 300.0);

enum class Metric { mpjpe, pmpjpe };
double evaluate(Metric metric, PoseView predicted, PoseView truth);

struct Choice {
  std::size_t index = 0;
  double value = 0.0;
};

/// Best (lowest) and worst (highest) hypothesis under `metric`; rows of
/// `hypotheses` are poses. Ties go to the lowest index.
Choice best_of(const nd::Tensor& hypotheses, PoseView truth, Metric metric = Metric::mpjpe);
Choice worst_of(const nd::Tensor& hypotheses, PoseView truth, Metric metric = Metric::mpjpe);

struct Spread {
  /// Per joint standard deviation along x, y and depth (n - 1 estimator).
  std::vector<Eigen::Vector3d> stddev;
  /// Per joint x/y covariance.
  std::vector<Eigen::Matrix2d> xy_covariance;

  Eigen::Vector3d mean_stddev() const;
};

Spread hypothesis_spread(const nd::Tensor& hypotheses);

/// z0 pose plus per-joint x/y noise drawn from the fitted Gaussians
/// (px converted at mm_per_px) and depth noise N(0, depth_sigma^2).
/// With include_clean, hypothesis 0 is the noise-free z0 pose.
nd::Tensor noise_baseline(PoseView z0_pose, std::span<const heatmap::Gaussian2D> gaussians, std::size_t count,
                          double depth_sigma_mm, Rng& rng, double mm_per_px = 10.0, bool include_clean = false);

/// Subtracts the root joint from every joint.
std::vector<double> hip_center(PoseView pose, std::size_t root = 0);

}  // namespace ambiflow::metrics
