#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ambiflow/heatmap.hpp"
#include "ambiflow/losses.hpp"
#include "ambiflow/nd/tensor.hpp"
#include "ambiflow/rng.hpp"
#include "ambiflow/skeleton.hpp"

namespace ambiflow::data {

/// Camera frame: x right, y down, z forward (metres). Orthographic cameras
/// map x, y to pixels at `focal` px per metre; perspective cameras divide
/// by depth with `focal` in px.
struct Camera {
  bool orthographic = true;
  double focal = 100.0;
  double cx = 160.0;
  double cy = 160.0;
  std::uint32_t width = 320;
  std::uint32_t height = 320;

  bool operator==(const Camera&) const = default;
};

/// (J x 3) pose in metres -> (J x 2) pixels, flat.
std::vector<double> project(std::span<const double> pose3d, const Camera& camera);

struct Sample {
  std::vector<double> pose3d;  // 3J, metres, camera frame
  std::vector<double> pose2d;  // 2J, px, exact projection of pose3d
  Camera camera;
  /// Fitted (or exact) per-joint heatmap Gaussians; their means are the 2D
  /// detections the model observes.
  std::vector<heatmap::Gaussian2D> gaussians;
  std::vector<bool> occluded;

  std::size_t joints() const { return pose3d.size() / 3; }
  /// 2J detections taken from the Gaussian means.
  std::vector<double> detections() const;
  bool operator==(const Sample&) const = default;
};

struct GenConfig {
  std::size_t count = 5000;
  /// Probability that a sample has occluded joints.
  double occlusion_rate = 0.3;
  /// An occluded sample gets between 1 and this many occluded non-hip joints.
  std::size_t max_occluded = 3;
  double occluded_sigma_min = 4.0;
  double occluded_sigma_max = 10.0;
  /// Fit Gaussians to synthesized heatmaps; otherwise store the generating
  /// Gaussians directly.
  bool fit_heatmaps = true;
  double depth = 5.0;
  Camera camera;
  std::uint64_t seed = 0;
};

/// Sample `index` of the dataset described by `config`; a pure function of
/// (config, skeleton, index).
Sample generate_sample(const GenConfig& config, const Skeleton& skeleton, std::size_t index);
std::vector<Sample> generate_dataset(const GenConfig& config, const Skeleton& skeleton);

/// Articulated pose in the world frame (y up) rooted at the origin.
std::vector<double> random_world_pose(const Skeleton& skeleton, Rng& rng);

struct Norm2D {
  double mean_x = 0.0;
  double mean_y = 0.0;
  double std = 1.0;
};

/// Subtracts the per-axis mean and divides by the standard deviation of
/// all centered coordinates.
std::vector<double> normalize_2d(std::span<const double> pose2d, Norm2D* stats = nullptr);
std::vector<double> denormalize_2d(std::span<const double> normalized, const Norm2D& stats);
Norm2D norm_stats_2d(std::span<const double> pose2d);
/// Per-axis mean with a fixed divisor in place of the pose std.
Norm2D center_stats_2d(std::span<const double> pose2d, double scale);
std::vector<double> apply_norm_2d(std::span<const double> pose2d, const Norm2D& stats);
/// Network input layout of a 2D pose: centred and divided by the camera
/// focal length. Under the orthographic camera this is the x/y of the
/// mean-centred 3D pose in metres, so the absolute pose size stays visible.
std::vector<double> network_input_2d(std::span<const double> pose2d, const Camera& camera, Norm2D* stats = nullptr);

/// Per-axis mean centering of a 3D pose.
std::vector<double> normalize_3d(std::span<const double> pose3d);
/// Root joint moved to the origin.
std::vector<double> hip_center(std::span<const double> pose3d, std::size_t root = 0);

/// Network input features per non-hip joint: [A, mu_x, mu_y, S11, S12, S22]
/// with the mean centred on the 2D pose mean and divided by `pixel_scale`,
/// and the covariance divided by sigma_gt^2. The fixed pixel scale keeps the
/// absolute image size of the pose visible to the network.
std::vector<double> condition_features(std::span<const heatmap::Gaussian2D> gaussians, const Skeleton& skeleton,
                                       const Norm2D& stats, double pixel_scale);

/// Dataset in network layout.
struct Prepared {
  nd::Tensor x;          // N x 3J, mean-centred metres
  nd::Tensor y;          // N x 2J, detections in network_input_2d layout
  nd::Tensor condition;  // N x 6(J - 3)
  std::vector<Norm2D> norms;
  std::vector<std::vector<heatmap::Gaussian2D>> gaussians;

  std::size_t size() const { return x.rows(); }
  /// Rows `index` of every field.
  Prepared subset(std::span<const std::size_t> index) const;
  losses::HeatmapCovariances covariances() const;
};

Prepared prepare(std::span<const Sample> samples, const Skeleton& skeleton);

inline constexpr std::uint32_t kDatasetVersion = 1;

/// "AFDS", u32 version, u32 J, u64 count, per sample: 3J f64 pose, 2J f64
/// projection, camera record, 6J f64 Gaussian coefficients, occlusion bitmask;
/// trailing CRC32 of everything before it. Little-endian.
void write_dataset(const std::filesystem::path& path, std::span<const Sample> samples);
std::vector<Sample> read_dataset(const std::filesystem::path& path);

}  // namespace ambiflow::data
