#include "ambiflow/data.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "ambiflow/binio.hpp"
#include "ambiflow/error.hpp"
#include "ambiflow/metrics.hpp"

namespace ambiflow::data {

namespace {

struct AngleRange {
  double flex_lo, flex_hi;  // about the parent's x axis
  double abd_lo, abd_hi;    // about z
  double twist;             // symmetric, about y
};

AngleRange range_for(const std::string& child) {
  if (child == "r_hip" || child == "l_hip") return {-0.1, 0.1, -0.1, 0.1, 0.1};
  if (child == "r_knee" || child == "l_knee") return {-1.4, 0.5, -0.5, 0.5, 0.3};
  if (child == "r_ankle" || child == "l_ankle") return {0.0, 1.6, -0.1, 0.1, 0.1};
  if (child == "spine") return {-0.3, 0.7, -0.3, 0.3, 0.4};
  if (child == "thorax") return {-0.2, 0.3, -0.2, 0.2, 0.3};
  if (child == "head") return {-0.5, 0.5, -0.4, 0.4, 0.5};
  if (child == "r_shoulder" || child == "l_shoulder") return {-0.2, 0.2, -0.2, 0.2, 0.1};
  if (child == "r_elbow" || child == "l_elbow") return {-1.6, 1.6, -1.4, 1.4, 0.6};
  if (child == "r_wrist" || child == "l_wrist") return {-2.2, 0.0, -0.3, 0.3, 0.3};
  return {-0.3, 0.3, -0.3, 0.3, 0.3};
}

Eigen::Matrix3d rotation(double flex, double abd, double twist) {
  return (Eigen::AngleAxisd(abd, Eigen::Vector3d::UnitZ()) * Eigen::AngleAxisd(flex, Eigen::Vector3d::UnitX()) *
          Eigen::AngleAxisd(twist, Eigen::Vector3d::UnitY()))
      .toRotationMatrix();
}

void write_camera(binio::Writer& w, const Camera& c) {
  w.u8(c.orthographic ? 1 : 0);
  w.f64(c.focal);
  w.f64(c.cx);
  w.f64(c.cy);
  w.u32(c.width);
  w.u32(c.height);
}

Camera read_camera(binio::Reader& r) {
  Camera c;
  c.orthographic = r.u8() != 0;
  c.focal = r.f64();
  c.cx = r.f64();
  c.cy = r.f64();
  c.width = r.u32();
  c.height = r.u32();
  return c;
}

constexpr std::size_t kCameraBytes = 1 + 3 * 8 + 2 * 4;

std::size_t record_bytes(std::size_t j) { return (3 * j + 2 * j + 6 * j) * 8 + kCameraBytes + (j + 7) / 8; }

heatmap::Gaussian2D fit_on_crop(const heatmap::Gaussian2D& truth, double max_sigma) {
  // The crop is centred on the pixel nearest the mean; pixel centres sit at
  // integer coordinates of the crop frame.
  const auto half = static_cast<long>(std::max(8.0, std::ceil(4.0 * max_sigma)));
  const long ox = std::lround(truth.mean_x) - half;
  const long oy = std::lround(truth.mean_y) - half;
  const auto size = static_cast<std::size_t>(2 * half + 1);
  heatmap::Gaussian2D local = truth;
  local.mean_x -= static_cast<double>(ox);
  local.mean_y -= static_cast<double>(oy);
  const heatmap::Heatmap map = heatmap::synthesize_heatmap(local, size, size);
  const auto [col, row] = heatmap::argmax(map);
  const auto init = heatmap::Gaussian2D::initial(static_cast<double>(col), static_cast<double>(row));
  heatmap::Gaussian2D fitted = heatmap::fit_gaussian(map, init).gaussian;
  fitted.mean_x += static_cast<double>(ox);
  fitted.mean_y += static_cast<double>(oy);
  return fitted;
}

}  // namespace

std::vector<double> project(std::span<const double> pose3d, const Camera& camera) {
  if (pose3d.size() % 3 != 0) throw ShapeError("project: pose length must be 3J");
  const std::size_t j = pose3d.size() / 3;
  std::vector<double> out(2 * j);
  for (std::size_t i = 0; i < j; ++i) {
    const double x = pose3d[3 * i], y = pose3d[3 * i + 1], z = pose3d[3 * i + 2];
    if (camera.orthographic) {
      out[2 * i] = camera.focal * x + camera.cx;
      out[2 * i + 1] = camera.focal * y + camera.cy;
    } else {
      if (!(z > 0.0)) throw InvalidArgument("project: joint " + std::to_string(i) + " is not in front of the camera");
      out[2 * i] = camera.focal * x / z + camera.cx;
      out[2 * i + 1] = camera.focal * y / z + camera.cy;
    }
  }
  return out;
}

std::vector<double> Sample::detections() const {
  std::vector<double> out(2 * gaussians.size());
  for (std::size_t i = 0; i < gaussians.size(); ++i) {
    out[2 * i] = gaussians[i].mean_x;
    out[2 * i + 1] = gaussians[i].mean_y;
  }
  return out;
}

std::vector<double> random_world_pose(const Skeleton& skeleton, Rng& rng) {
  const std::size_t j = skeleton.joints();
  std::vector<Eigen::Matrix3d> frame(j, Eigen::Matrix3d::Identity());
  std::vector<Eigen::Vector3d> pos(j, Eigen::Vector3d::Zero());
  for (std::size_t k = 0; k < skeleton.bone_count(); ++k) {
    const auto [parent, child] = skeleton.bones[k];
    const AngleRange r = range_for(skeleton.names[child]);
    const double flex = rng.uniform(r.flex_lo, r.flex_hi);
    const double abd = rng.uniform(r.abd_lo, r.abd_hi);
    const double twist = rng.uniform(-r.twist, r.twist);
    frame[child] = frame[parent] * rotation(flex, abd, twist);
    pos[child] = pos[parent] + skeleton.bone_lengths[k] * (frame[child] * skeleton.rest_directions[k]);
  }
  const Eigen::Matrix3d global =
      (Eigen::AngleAxisd(rng.uniform(-std::numbers::pi, std::numbers::pi), Eigen::Vector3d::UnitY()) *
       Eigen::AngleAxisd(rng.uniform(-0.2, 0.2), Eigen::Vector3d::UnitX()) *
       Eigen::AngleAxisd(rng.uniform(-0.1, 0.1), Eigen::Vector3d::UnitZ()))
          .toRotationMatrix();
  std::vector<double> out(3 * j);
  for (std::size_t i = 0; i < j; ++i) {
    const Eigen::Vector3d p = global * pos[i];
    for (int a = 0; a < 3; ++a) out[3 * i + static_cast<std::size_t>(a)] = p[a];
  }
  return out;
}

Sample generate_sample(const GenConfig& config, const Skeleton& skeleton, std::size_t index) {
  const std::size_t j = skeleton.joints();
  Rng rng(config.seed, "dataset-sample", index);
  const auto world = random_world_pose(skeleton, rng);

  Sample s;
  s.camera = config.camera;
  // world (y up) -> camera (y down, z forward), a proper rotation
  const double tx = rng.uniform(-0.2, 0.2), ty = rng.uniform(-0.2, 0.2);
  s.pose3d.resize(3 * j);
  for (std::size_t i = 0; i < j; ++i) {
    s.pose3d[3 * i] = world[3 * i] + tx;
    s.pose3d[3 * i + 1] = -world[3 * i + 1] + ty;
    s.pose3d[3 * i + 2] = -world[3 * i + 2] + config.depth;
  }
  s.pose2d = project(s.pose3d, s.camera);

  s.occluded.assign(j, false);
  if (config.occlusion_rate > 0.0 && rng.uniform() < config.occlusion_rate) {
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < j; ++i)
      if (!skeleton.is_hip(i)) candidates.push_back(i);
    const std::size_t n = std::min<std::size_t>(1 + rng.below(std::max<std::size_t>(config.max_occluded, 1)),
                                                candidates.size());
    for (std::size_t m = 0; m < n; ++m) {
      const std::size_t pick = m + rng.below(candidates.size() - m);
      std::swap(candidates[m], candidates[pick]);
      s.occluded[candidates[m]] = true;
    }
  }

  s.gaussians.resize(j);
  for (std::size_t i = 0; i < j; ++i) {
    heatmap::Gaussian2D g =
        heatmap::Gaussian2D::isotropic(1.0, s.pose2d[2 * i], s.pose2d[2 * i + 1], heatmap::kSigmaGt);
    double max_sigma = heatmap::kSigmaGt;
    if (s.occluded[i]) {
      const double sx = rng.uniform(config.occluded_sigma_min, config.occluded_sigma_max);
      const double sy = rng.uniform(config.occluded_sigma_min, config.occluded_sigma_max);
      const double angle = rng.uniform(0.0, std::numbers::pi);
      const Eigen::Matrix2d rot = Eigen::Rotation2Dd(angle).toRotationMatrix();
      const Eigen::Matrix2d cov = rot * Eigen::Vector2d(sx * sx, sy * sy).asDiagonal() * rot.transpose();
      // detector output displaced by its own uncertainty
      const Eigen::Matrix2d root = rot * Eigen::Vector2d(sx, sy).asDiagonal();
      const Eigen::Vector2d shift = root * Eigen::Vector2d(rng.normal(), rng.normal());
      g.mean_x += shift[0];
      g.mean_y += shift[1];
      g.s11 = cov(0, 0);
      g.s12 = 0.5 * (cov(0, 1) + cov(1, 0));
      g.s22 = cov(1, 1);
      g.amplitude = heatmap::kSigmaGt / std::sqrt(sx * sy);
      max_sigma = std::max(sx, sy);
    }
    s.gaussians[i] = config.fit_heatmaps ? fit_on_crop(g, max_sigma) : g;
  }
  return s;
}

std::vector<Sample> generate_dataset(const GenConfig& config, const Skeleton& skeleton) {
  skeleton.validate();
  if (config.occlusion_rate < 0.0 || config.occlusion_rate > 1.0) {
    throw InvalidArgument("occlusion rate must lie in [0, 1]");
  }
  if (!(config.occluded_sigma_min > 0.0) || config.occluded_sigma_max < config.occluded_sigma_min) {
    throw InvalidArgument("occluded sigma range must satisfy 0 < min <= max");
  }
  std::vector<Sample> out(config.count);
  for (std::size_t i = 0; i < config.count; ++i) out[i] = generate_sample(config, skeleton, i);
  return out;
}

Norm2D norm_stats_2d(std::span<const double> pose2d) {
  if (pose2d.empty() || pose2d.size() % 2 != 0) throw ShapeError("normalize_2d: pose length must be 2J");
  const std::size_t j = pose2d.size() / 2;
  Norm2D s;
  for (std::size_t i = 0; i < j; ++i) {
    s.mean_x += pose2d[2 * i];
    s.mean_y += pose2d[2 * i + 1];
  }
  s.mean_x /= static_cast<double>(j);
  s.mean_y /= static_cast<double>(j);
  double ss = 0.0;
  for (std::size_t i = 0; i < j; ++i) {
    const double dx = pose2d[2 * i] - s.mean_x, dy = pose2d[2 * i + 1] - s.mean_y;
    ss += dx * dx + dy * dy;
  }
  s.std = std::sqrt(ss / static_cast<double>(2 * j));
  if (!(s.std > 1e-12)) throw InvalidArgument("normalize_2d: degenerate pose with zero spread");
  return s;
}

std::vector<double> normalize_2d(std::span<const double> pose2d, Norm2D* stats) {
  const Norm2D s = norm_stats_2d(pose2d);
  if (stats) *stats = s;
  return apply_norm_2d(pose2d, s);
}

Norm2D center_stats_2d(std::span<const double> pose2d, double scale) {
  if (!(scale > 0.0)) throw InvalidArgument("center_stats_2d: scale must be > 0");
  Norm2D s = norm_stats_2d(pose2d);
  s.std = scale;
  return s;
}

std::vector<double> apply_norm_2d(std::span<const double> pose2d, const Norm2D& stats) {
  if (pose2d.size() % 2 != 0) throw ShapeError("apply_norm_2d: pose length must be 2J");
  std::vector<double> out(pose2d.size());
  for (std::size_t i = 0; i < out.size(); i += 2) {
    out[i] = (pose2d[i] - stats.mean_x) / stats.std;
    out[i + 1] = (pose2d[i + 1] - stats.mean_y) / stats.std;
  }
  return out;
}

std::vector<double> network_input_2d(std::span<const double> pose2d, const Camera& camera, Norm2D* stats) {
  const Norm2D s = center_stats_2d(pose2d, camera.focal);
  if (stats) *stats = s;
  return apply_norm_2d(pose2d, s);
}

std::vector<double> denormalize_2d(std::span<const double> normalized, const Norm2D& stats) {
  if (normalized.size() % 2 != 0) throw ShapeError("denormalize_2d: pose length must be 2J");
  std::vector<double> out(normalized.size());
  for (std::size_t i = 0; i < out.size(); i += 2) {
    out[i] = normalized[i] * stats.std + stats.mean_x;
    out[i + 1] = normalized[i + 1] * stats.std + stats.mean_y;
  }
  return out;
}

std::vector<double> normalize_3d(std::span<const double> pose3d) {
  if (pose3d.empty() || pose3d.size() % 3 != 0) throw ShapeError("normalize_3d: pose length must be 3J");
  const std::size_t j = pose3d.size() / 3;
  double m[3] = {0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < j; ++i)
    for (std::size_t a = 0; a < 3; ++a) m[a] += pose3d[3 * i + a];
  std::vector<double> out(pose3d.begin(), pose3d.end());
  for (std::size_t i = 0; i < j; ++i)
    for (std::size_t a = 0; a < 3; ++a) out[3 * i + a] -= m[a] / static_cast<double>(j);
  return out;
}

std::vector<double> hip_center(std::span<const double> pose3d, std::size_t root) {
  return metrics::hip_center(pose3d, root);
}

std::vector<double> condition_features(std::span<const heatmap::Gaussian2D> gaussians, const Skeleton& skeleton,
                                       const Norm2D& stats, double pixel_scale) {
  if (!(pixel_scale > 0.0)) throw InvalidArgument("condition_features: pixel scale must be > 0");
  std::vector<double> raw = heatmap::build_condition(gaussians, skeleton.joints(), skeleton.hips);
  const double var_gt = heatmap::kSigmaGt * heatmap::kSigmaGt;
  for (std::size_t i = 0; i < raw.size(); i += 6) {
    raw[i + 1] = (raw[i + 1] - stats.mean_x) / pixel_scale;
    raw[i + 2] = (raw[i + 2] - stats.mean_y) / pixel_scale;
    raw[i + 3] /= var_gt;
    raw[i + 4] /= var_gt;
    raw[i + 5] /= var_gt;
  }
  return raw;
}

Prepared prepare(std::span<const Sample> samples, const Skeleton& skeleton) {
  const std::size_t n = samples.size(), j = skeleton.joints();
  const std::size_t cdim = 6 * (j - skeleton.hips.size());
  Prepared p{nd::Tensor::zeros(n, 3 * j), nd::Tensor::zeros(n, 2 * j), nd::Tensor::zeros(n, cdim), {}, {}};
  p.norms.resize(n);
  p.gaussians.resize(n);
  for (std::size_t s = 0; s < n; ++s) {
    const Sample& sm = samples[s];
    if (sm.joints() != j || sm.gaussians.size() != j) throw ShapeError("prepare: sample joint count mismatch");
    const auto x = normalize_3d(sm.pose3d);
    const auto y = network_input_2d(sm.detections(), sm.camera, &p.norms[s]);
    const auto c = condition_features(sm.gaussians, skeleton, p.norms[s], sm.camera.focal);
    std::copy(x.begin(), x.end(), p.x.data() + s * 3 * j);
    std::copy(y.begin(), y.end(), p.y.data() + s * 2 * j);
    std::copy(c.begin(), c.end(), p.condition.data() + s * cdim);
    p.gaussians[s] = sm.gaussians;
  }
  return p;
}

Prepared Prepared::subset(std::span<const std::size_t> index) const {
  auto rows = [&](const nd::Tensor& t) {
    nd::Tensor out = nd::Tensor::zeros(index.size(), t.cols());
    for (std::size_t r = 0; r < index.size(); ++r)
      std::copy_n(t.data() + index[r] * t.cols(), t.cols(), out.data() + r * t.cols());
    return out;
  };
  Prepared p{rows(x), rows(y), rows(condition), {}, {}};
  for (auto i : index) {
    p.norms.push_back(norms[i]);
    p.gaussians.push_back(gaussians[i]);
  }
  return p;
}

losses::HeatmapCovariances Prepared::covariances() const {
  return losses::HeatmapCovariances::from_gaussians(gaussians);
}

void write_dataset(const std::filesystem::path& path, std::span<const Sample> samples) {
  const std::size_t j = samples.empty() ? 0 : samples.front().joints();
  binio::Writer w;
  w.raw("AFDS");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(j));
  w.u64(samples.size());
  for (const auto& s : samples) {
    if (s.joints() != j || s.pose2d.size() != 2 * j || s.gaussians.size() != j || s.occluded.size() != j) {
      throw ShapeError("write_dataset: inconsistent sample layout");
    }
    for (double v : s.pose3d) w.f64(v);
    for (double v : s.pose2d) w.f64(v);
    write_camera(w, s.camera);
    for (const auto& g : s.gaussians)
      for (double v : {g.amplitude, g.mean_x, g.mean_y, g.s11, g.s12, g.s22}) w.f64(v);
    for (std::size_t b = 0; b < (j + 7) / 8; ++b) {
      std::uint8_t byte = 0;
      for (std::size_t k = 0; k < 8 && 8 * b + k < j; ++k)
        if (s.occluded[8 * b + k]) byte |= static_cast<std::uint8_t>(1u << k);
      w.u8(byte);
    }
  }
  w.u32(binio::crc32(w.bytes()));
  binio::write_file(path, w.bytes());
}

std::vector<Sample> read_dataset(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(bytes);
  if (r.raw(4) != "AFDS") throw FormatError("dataset: bad magic in " + path.string());
  const std::uint32_t version = r.u32();
  if (version != kDatasetVersion) {
    throw VersionError("dataset: unsupported format version " + std::to_string(version));
  }
  const std::size_t j = r.u32();
  const std::uint64_t count = r.u64();
  const std::size_t header = 4 + 4 + 4 + 8;
  if (j > 0 && count > (bytes.size() / record_bytes(j)) + 1) throw TruncatedError("dataset: file is truncated");
  const std::size_t expected = header + static_cast<std::size_t>(count) * (j ? record_bytes(j) : 0) + 4;
  if (bytes.size() < expected) throw TruncatedError("dataset: file is truncated");
  if (bytes.size() > expected) throw FormatError("dataset: trailing bytes after checksum");
  const std::span<const std::uint8_t> body(bytes.data(), expected - 4);
  binio::Reader tail(std::span<const std::uint8_t>(bytes.data() + expected - 4, 4));
  if (binio::crc32(body) != tail.u32()) throw ChecksumError("dataset: checksum mismatch in " + path.string());

  std::vector<Sample> out(static_cast<std::size_t>(count));
  for (auto& s : out) {
    s.pose3d.resize(3 * j);
    for (auto& v : s.pose3d) v = r.f64();
    s.pose2d.resize(2 * j);
    for (auto& v : s.pose2d) v = r.f64();
    s.camera = read_camera(r);
    s.gaussians.resize(j);
    for (auto& g : s.gaussians) {
      g.amplitude = r.f64();
      g.mean_x = r.f64();
      g.mean_y = r.f64();
      g.s11 = r.f64();
      g.s12 = r.f64();
      g.s22 = r.f64();
    }
    s.occluded.assign(j, false);
    for (std::size_t b = 0; b < (j + 7) / 8; ++b) {
      const std::uint8_t byte = r.u8();
      for (std::size_t k = 0; k < 8 && 8 * b + k < j; ++k) s.occluded[8 * b + k] = (byte >> k) & 1u;
    }
  }
  return out;
}

}  // namespace ambiflow::data
