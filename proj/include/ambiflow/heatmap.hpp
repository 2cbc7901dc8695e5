#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace ambiflow::heatmap {

/// Ground-truth heatmap standard deviation of the 2D detector, px.
inline constexpr double kSigmaGt = 2.0;

/// Single-channel map; pixel (col, row) has its center at coordinate (col, row).
struct Heatmap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> values;  // row-major, height x width

  Heatmap() = default;
  Heatmap(std::size_t w, std::size_t h) : width(w), height(h), values(w * h, 0.0) {}
  double& at(std::size_t col, std::size_t row) { return values[row * width + col]; }
  double at(std::size_t col, std::size_t row) const { return values[row * width + col]; }
};

/// A * exp(-1/2 (p - mu)^T Sigma^-1 (p - mu)), all lengths in px.
struct Gaussian2D {
  double amplitude = 1.0;
  double mean_x = 0.0;
  double mean_y = 0.0;
  double s11 = kSigmaGt * kSigmaGt;
  double s12 = 0.0;
  double s22 = kSigmaGt * kSigmaGt;

  Eigen::Matrix2d covariance() const;
  bool is_spd() const;
  double sigma_x() const;
  double sigma_y() const;
  double evaluate(double x, double y) const;
  bool operator==(const Gaussian2D&) const = default;

  static Gaussian2D isotropic(double amplitude, double mx, double my, double sigma);
  /// Initial guess for fitting: unit amplitude, sigma_x = sigma_y = sigma_gt.
  static Gaussian2D initial(double mx, double my, double sigma_gt = kSigmaGt);
};

Heatmap synthesize_heatmap(const Gaussian2D& g, std::size_t width, std::size_t height);

struct FitOptions {
  int max_iterations = 200;
  double relative_tolerance = 1e-8;
  double initial_damping = 1e-3;
  double eigenvalue_floor = 1e-4;
  /// Residual energy relative to the map energy above which the fit is
  /// flagged as not explained by a single Gaussian.
  double residual_threshold = 0.05;
};

struct FitResult {
  Gaussian2D gaussian;
  int iterations = 0;
  bool converged = false;
  double residual = 0.0;           // sum of squared residuals
  double relative_residual = 0.0;  // residual / sum of squared map values
  bool high_residual = false;

  bool warning() const { return !converged || high_residual; }
};

/// Levenberg-Marquardt least squares fit of a 2D Gaussian. The covariance
/// is optimized through its Cholesky factor and projected back onto the SPD
/// cone with an eigenvalue floor at the end.
FitResult fit_gaussian(const Heatmap& map, const Gaussian2D& init, const FitOptions& options = {});

/// Per non-hip joint [A, mu_x, mu_y, S11, S12, S22], joints in index order.
std::vector<double> build_condition(std::span<const Gaussian2D> gaussians, std::size_t joints,
                                    std::span<const std::size_t> hips);

/// True iff some joint has sqrt(S11) > threshold or sqrt(S22) > threshold.
bool is_ambiguous(std::span<const Gaussian2D> gaussians, double threshold = 5.0);

/// One heatmap per joint, all of equal size.
struct HeatmapStack {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Heatmap> joints;
};

/// Binary layout: "AFHM", u32 width, u32 height, u32 joints, then float32
/// grids (row-major) per joint; little-endian.
void write_heatmaps(const std::filesystem::path& path, const HeatmapStack& stack);
HeatmapStack read_heatmaps(const std::filesystem::path& path);

/// Location of the largest value, (col, row).
std::pair<std::size_t, std::size_t> argmax(const Heatmap& map);

std::string fits_csv_header();
std::string fits_csv_row(std::size_t joint, const FitResult& fit);

}  // namespace ambiflow::heatmap
