#include "ambiflow/metrics.hpp"

#include <Eigen/Dense>
#include <Eigen/Geometry>
#include <algorithm>
#include <cmath>

#include "ambiflow/error.hpp"

namespace ambiflow::metrics {

namespace {

std::size_t joint_count(PoseView a, PoseView b) {
  if (a.size() != b.size() || a.size() % 3 != 0 || a.empty()) {
    throw ShapeError("metrics: poses must have equal length 3J");
  }
  return a.size() / 3;
}

double joint_error(PoseView a, PoseView b, std::size_t j) {
  const double dx = a[3 * j] - b[3 * j], dy = a[3 * j + 1] - b[3 * j + 1], dz = a[3 * j + 2] - b[3 * j + 2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

Eigen::Matrix3Xd as_points(PoseView p) {
  const auto j = static_cast<Eigen::Index>(p.size() / 3);
  Eigen::Matrix3Xd m(3, j);
  for (Eigen::Index i = 0; i < j; ++i)
    for (Eigen::Index a = 0; a < 3; ++a) m(a, i) = p[static_cast<std::size_t>(3 * i + a)];
  return m;
}

bool collinear(const Eigen::Matrix3Xd& pts) {
  const Eigen::Matrix3Xd centered = pts.colwise() - pts.rowwise().mean();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered);
  const auto& s = svd.singularValues();
  return s.size() < 2 || !(s[1] > 1e-9 * std::max(s[0], 1e-300));
}

}  // namespace

double mpjpe(PoseView predicted, PoseView truth) {
  const std::size_t j = joint_count(predicted, truth);
  double total = 0.0;
  for (std::size_t i = 0; i < j; ++i) total += joint_error(predicted, truth, i);
  return total / static_cast<double>(j);
}

double max_joint_error(PoseView predicted, PoseView truth) {
  const std::size_t j = joint_count(predicted, truth);
  double m = 0.0;
  for (std::size_t i = 0; i < j; ++i) m = std::max(m, joint_error(predicted, truth, i));
  return m;
}

std::vector<double> procrustes_align(PoseView predicted, PoseView truth, bool allow_scale) {
  const std::size_t j = joint_count(predicted, truth);
  if (j < 3) throw InvalidArgument("procrustes_align: at least three joints are required");
  const Eigen::Matrix3Xd src = as_points(predicted);
  const Eigen::Matrix3Xd dst = as_points(truth);
  if (collinear(src) || collinear(dst)) throw InvalidArgument("procrustes_align: degenerate (collinear) pose");
  const Eigen::Matrix4d t = Eigen::umeyama(src, dst, allow_scale);
  const Eigen::Matrix3Xd aligned = (t.topLeftCorner<3, 3>() * src).colwise() + t.topRightCorner<3, 1>();
  std::vector<double> out(predicted.size());
  for (std::size_t i = 0; i < j; ++i)
    for (std::size_t a = 0; a < 3; ++a)
      out[3 * i + a] = aligned(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(i));
  return out;
}

double pmpjpe(PoseView predicted, PoseView truth, bool allow_scale) {
  const auto aligned = procrustes_align(predicted, truth, allow_scale);
  return mpjpe(aligned, truth);
}

double pck(PoseView predicted, PoseView truth, double threshold_mm) {
  const std::size_t j = joint_count(predicted, truth);
  std::size_t ok = 0;
  for (std::size_t i = 0; i < j; ++i)
    if (joint_error(predicted, truth, i) < threshold_mm) ++ok;
  return 100.0 * static_cast<double>(ok) / static_cast<double>(j);
}

double cps(PoseView predicted, PoseView truth, double max_threshold_mm) {
  // CP(t) = [max error < t] integrates to max(0, T - max error)
  return std::max(0.0, max_threshold_mm - max_joint_error(predicted, truth));
}

double evaluate(Metric metric, PoseView predicted, PoseView truth) {
  switch (metric) {
    case Metric::mpjpe:
      return mpjpe(predicted, truth);
    case Metric::pmpjpe:
      return pmpjpe(predicted, truth);
  }
  throw InvalidArgument("unknown metric");
}

namespace {
template <class Better>
Choice pick(const nd::Tensor& hyps, PoseView truth, Metric metric, Better better) {
  if (hyps.rows() == 0 || hyps.size() == 0) throw InvalidArgument("best_of/worst_of: empty hypothesis set");
  const std::size_t d = hyps.cols();
  Choice c{0, evaluate(metric, {hyps.data(), d}, truth)};
  for (std::size_t i = 1; i < hyps.rows(); ++i) {
    const double v = evaluate(metric, {hyps.data() + i * d, d}, truth);
    if (better(v, c.value)) c = {i, v};
  }
  return c;
}
}  // namespace

Choice best_of(const nd::Tensor& hyps, PoseView truth, Metric metric) {
  return pick(hyps, truth, metric, [](double a, double b) { return a < b; });
}

Choice worst_of(const nd::Tensor& hyps, PoseView truth, Metric metric) {
  return pick(hyps, truth, metric, [](double a, double b) { return a > b; });
}

Eigen::Vector3d Spread::mean_stddev() const {
  Eigen::Vector3d m = Eigen::Vector3d::Zero();
  for (const auto& s : stddev) m += s;
  return stddev.empty() ? m : Eigen::Vector3d(m / static_cast<double>(stddev.size()));
}

Spread hypothesis_spread(const nd::Tensor& hyps) {
  const std::size_t n = hyps.rows(), d = hyps.cols();
  if (n < 2) throw InvalidArgument("hypothesis_spread: at least two hypotheses are required");
  if (d % 3 != 0) throw ShapeError("hypothesis_spread: pose length must be 3J");
  const std::size_t j = d / 3;
  Spread s;
  for (std::size_t i = 0; i < j; ++i) {
    Eigen::Vector3d mean = Eigen::Vector3d::Zero();
    for (std::size_t r = 0; r < n; ++r)
      for (int a = 0; a < 3; ++a) mean[a] += hyps(r, 3 * i + static_cast<std::size_t>(a));
    mean /= static_cast<double>(n);
    Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
    for (std::size_t r = 0; r < n; ++r) {
      Eigen::Vector3d p(hyps(r, 3 * i), hyps(r, 3 * i + 1), hyps(r, 3 * i + 2));
      const Eigen::Vector3d dlt = p - mean;
      cov += dlt * dlt.transpose();
    }
    cov /= static_cast<double>(n - 1);
    cov = 0.5 * (cov + cov.transpose()).eval();  // fused multiply-adds can break exact symmetry
    s.stddev.emplace_back(std::sqrt(cov(0, 0)), std::sqrt(cov(1, 1)), std::sqrt(cov(2, 2)));
    s.xy_covariance.push_back(cov.topLeftCorner<2, 2>());
  }
  return s;
}

nd::Tensor noise_baseline(PoseView z0_pose, std::span<const heatmap::Gaussian2D> gaussians, std::size_t count,
                          double depth_sigma_mm, Rng& rng, double mm_per_px, bool include_clean) {
  const std::size_t d = z0_pose.size();
  const std::size_t j = d / 3;
  if (d % 3 != 0 || gaussians.size() != j) throw ShapeError("noise_baseline: one Gaussian per joint required");
  if (depth_sigma_mm < 0.0) throw InvalidArgument("noise_baseline: depth sigma must be >= 0");
  std::vector<Eigen::Matrix2d> roots;
  for (const auto& g : gaussians) {
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(g.covariance());
    const Eigen::Vector2d ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    roots.push_back(eig.eigenvectors() * ev.asDiagonal() * mm_per_px);
  }
  nd::Tensor out = nd::Tensor::zeros(count, d);
  for (std::size_t r = 0; r < count; ++r) {
    for (std::size_t i = 0; i < d; ++i) out(r, i) = z0_pose[i];
    if (include_clean && r == 0) continue;
    for (std::size_t i = 0; i < j; ++i) {
      const Eigen::Vector2d e(rng.normal(), rng.normal());
      const Eigen::Vector2d n = roots[i] * e;
      out(r, 3 * i) += n[0];
      out(r, 3 * i + 1) += n[1];
      out(r, 3 * i + 2) += depth_sigma_mm * rng.normal();
    }
  }
  return out;
}

std::vector<double> hip_center(PoseView pose, std::size_t root) {
  if (pose.size() % 3 != 0 || 3 * root + 2 >= pose.size()) throw ShapeError("hip_center: bad pose");
  std::vector<double> out(pose.begin(), pose.end());
  const double rx = pose[3 * root], ry = pose[3 * root + 1], rz = pose[3 * root + 2];
  for (std::size_t i = 0; i < out.size(); i += 3) {
    out[i] -= rx;
    out[i + 1] -= ry;
    out[i + 2] -= rz;
  }
  return out;
}

}  // namespace ambiflow::metrics
