#include "ambiflow/heatmap.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "ambiflow/binio.hpp"
#include "ambiflow/error.hpp"

namespace ambiflow::heatmap {

Eigen::Matrix2d Gaussian2D::covariance() const {
  Eigen::Matrix2d c;
  c << s11, s12, s12, s22;
  return c;
}

bool Gaussian2D::is_spd() const { return s11 > 0.0 && s22 > 0.0 && s11 * s22 - s12 * s12 > 0.0; }
double Gaussian2D::sigma_x() const { return std::sqrt(s11); }
double Gaussian2D::sigma_y() const { return std::sqrt(s22); }

double Gaussian2D::evaluate(double x, double y) const {
  const double det = s11 * s22 - s12 * s12;
  const double dx = x - mean_x, dy = y - mean_y;
  const double q = (s22 * dx * dx - 2.0 * s12 * dx * dy + s11 * dy * dy) / det;
  return amplitude * std::exp(-0.5 * q);
}

Gaussian2D Gaussian2D::isotropic(double amplitude, double mx, double my, double sigma) {
  return {amplitude, mx, my, sigma * sigma, 0.0, sigma * sigma};
}

Gaussian2D Gaussian2D::initial(double mx, double my, double sigma_gt) {
  return isotropic(1.0, mx, my, sigma_gt);
}

Heatmap synthesize_heatmap(const Gaussian2D& g, std::size_t width, std::size_t height) {
  if (!g.is_spd()) throw InvalidArgument("synthesize_heatmap: covariance is not positive definite");
  Heatmap map(width, height);
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c)
      map.at(c, r) = g.evaluate(static_cast<double>(c), static_cast<double>(r));
  return map;
}

std::pair<std::size_t, std::size_t> argmax(const Heatmap& map) {
  const auto it = std::max_element(map.values.begin(), map.values.end());
  const auto idx = static_cast<std::size_t>(it - map.values.begin());
  return {idx % map.width, idx / map.width};
}

namespace {

using Params = Eigen::Matrix<double, 6, 1>;  // A, mx, my, l11, l21, l22

Params to_params(const Gaussian2D& g) {
  const double l11 = std::sqrt(g.s11);
  const double l21 = g.s12 / l11;
  const double l22 = std::sqrt(std::max(g.s22 - l21 * l21, 1e-12));
  Params p;
  p << g.amplitude, g.mean_x, g.mean_y, l11, l21, l22;
  return p;
}

Gaussian2D from_params(const Params& p) {
  Gaussian2D g;
  g.amplitude = p[0];
  g.mean_x = p[1];
  g.mean_y = p[2];
  g.s11 = p[3] * p[3];
  g.s12 = p[3] * p[4];
  g.s22 = p[4] * p[4] + p[5] * p[5];
  return g;
}

// Residuals (model - data) and, optionally, the Jacobian of the model.
double evaluate(const Heatmap& map, const Params& p, Eigen::VectorXd* residual,
                Eigen::Matrix<double, Eigen::Dynamic, 6>* jac) {
  const double a = p[0], mx = p[1], my = p[2], l11 = p[3], l21 = p[4], l22 = p[5];
  double cost = 0.0;
  std::size_t i = 0;
  for (std::size_t r = 0; r < map.height; ++r) {
    for (std::size_t c = 0; c < map.width; ++c, ++i) {
      const double d1 = static_cast<double>(c) - mx;
      const double d2 = static_cast<double>(r) - my;
      // w = L^-1 d
      const double w1 = d1 / l11;
      const double w2 = (d2 - l21 * w1) / l22;
      const double e = std::exp(-0.5 * (w1 * w1 + w2 * w2));
      const double f = a * e;
      const double res = f - map.values[i];
      cost += res * res;
      if (residual) (*residual)[static_cast<Eigen::Index>(i)] = res;
      if (jac) {
        // df/dtheta = -f (w1 dw1 + w2 dw2)
        const double dw1_dmx = -1.0 / l11;
        const double dw2_dmx = l21 / (l11 * l22);
        const double dw2_dmy = -1.0 / l22;
        const double dw1_dl11 = -w1 / l11;
        const double dw2_dl11 = l21 * w1 / (l11 * l22);
        const double dw2_dl21 = -w1 / l22;
        const double dw2_dl22 = -w2 / l22;
        auto row = jac->row(static_cast<Eigen::Index>(i));
        row[0] = e;
        row[1] = -f * (w1 * dw1_dmx + w2 * dw2_dmx);
        row[2] = -f * (w2 * dw2_dmy);
        row[3] = -f * (w1 * dw1_dl11 + w2 * dw2_dl11);
        row[4] = -f * (w2 * dw2_dl21);
        row[5] = -f * (w2 * dw2_dl22);
      }
    }
  }
  return cost;
}

Gaussian2D project_spd(Gaussian2D g, double floor) {
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eig(g.covariance());
  Eigen::Vector2d ev = eig.eigenvalues().cwiseMax(floor);
  const Eigen::Matrix2d c = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
  g.s11 = c(0, 0);
  g.s12 = 0.5 * (c(0, 1) + c(1, 0));
  g.s22 = c(1, 1);
  return g;
}

}  // namespace

FitResult fit_gaussian(const Heatmap& map, const Gaussian2D& init, const FitOptions& options) {
  if (map.width == 0 || map.height == 0 || map.values.size() != map.width * map.height) {
    throw InvalidArgument("fit_gaussian: malformed heatmap");
  }
  double energy = 0.0, peak = 0.0;
  for (double v : map.values) {
    if (!std::isfinite(v)) throw NumericError("fit_gaussian: heatmap contains non-finite values");
    energy += v * v;
    peak = std::max(peak, v);
  }
  if (!(peak > 0.0)) throw InvalidArgument("fit_gaussian: heatmap has no positive value");
  if (!init.is_spd()) throw InvalidArgument("fit_gaussian: initial covariance is not positive definite");

  const auto n = static_cast<Eigen::Index>(map.values.size());
  Eigen::VectorXd res(n);
  Eigen::Matrix<double, Eigen::Dynamic, 6> jac(n, 6);
  Params p = to_params(init);
  double cost = evaluate(map, p, &res, &jac);
  double lambda = options.initial_damping;

  FitResult result;
  for (int it = 0; it < options.max_iterations; ++it) {
    result.iterations = it + 1;
    if (cost <= 1e-28 * energy) {
      result.converged = true;
      break;
    }
    const Eigen::Matrix<double, 6, 6> jtj = jac.transpose() * jac;
    const Params jtr = jac.transpose() * res;
    bool accepted = false;
    while (!accepted) {
      Eigen::Matrix<double, 6, 6> a = jtj;
      for (int k = 0; k < 6; ++k) a(k, k) += lambda * std::max(jtj(k, k), 1e-12);
      const Params step = a.ldlt().solve(-jtr);
      const Params trial = p + step;
      const double trial_cost = evaluate(map, trial, nullptr, nullptr);
      if (std::isfinite(trial_cost) && trial_cost < cost) {
        const double decrease = (cost - trial_cost) / cost;
        p = trial;
        cost = evaluate(map, p, &res, &jac);
        lambda = std::max(lambda / 10.0, 1e-15);
        accepted = true;
        if (decrease < options.relative_tolerance) result.converged = true;
      } else {
        lambda *= 10.0;
        if (lambda > 1e12) break;
      }
    }
    if (!accepted) {
      // no step reduces the cost: stationary point
      result.converged = true;
      break;
    }
    if (result.converged) break;
  }

  Gaussian2D g = from_params(p);
  result.gaussian = project_spd(g, options.eigenvalue_floor);
  result.residual = cost;
  result.relative_residual = energy > 0.0 ? cost / energy : 0.0;
  result.high_residual = result.relative_residual > options.residual_threshold;
  return result;
}

std::vector<double> build_condition(std::span<const Gaussian2D> gaussians, std::size_t joints,
                                    std::span<const std::size_t> hips) {
  if (gaussians.size() != joints) {
    throw InvalidArgument("build_condition: expected " + std::to_string(joints) + " Gaussians, got " +
                          std::to_string(gaussians.size()));
  }
  std::vector<double> out;
  out.reserve(6 * joints);
  for (std::size_t j = 0; j < joints; ++j) {
    if (std::find(hips.begin(), hips.end(), j) != hips.end()) continue;
    const auto& g = gaussians[j];
    out.insert(out.end(), {g.amplitude, g.mean_x, g.mean_y, g.s11, g.s12, g.s22});
  }
  return out;
}

bool is_ambiguous(std::span<const Gaussian2D> gaussians, double threshold) {
  return std::any_of(gaussians.begin(), gaussians.end(), [threshold](const Gaussian2D& g) {
    return std::sqrt(g.s11) > threshold || std::sqrt(g.s22) > threshold;
  });
}

void write_heatmaps(const std::filesystem::path& path, const HeatmapStack& stack) {
  binio::Writer w;
  w.raw("AFHM");
  w.u32(static_cast<std::uint32_t>(stack.width));
  w.u32(static_cast<std::uint32_t>(stack.height));
  w.u32(static_cast<std::uint32_t>(stack.joints.size()));
  for (const auto& m : stack.joints) {
    if (m.width != stack.width || m.height != stack.height) {
      throw InvalidArgument("write_heatmaps: all joint maps must share the stack size");
    }
    for (double v : m.values) w.f32(static_cast<float>(v));
  }
  binio::write_file(path, w.bytes());
}

HeatmapStack read_heatmaps(const std::filesystem::path& path) {
  const auto bytes = binio::read_file(path);
  binio::Reader r(bytes);
  if (r.raw(4) != "AFHM") throw FormatError(path.string() + ": not a heatmap file");
  HeatmapStack s;
  s.width = r.u32();
  s.height = r.u32();
  const std::size_t joints = r.u32();
  for (std::size_t j = 0; j < joints; ++j) {
    Heatmap m(s.width, s.height);
    for (double& v : m.values) v = r.f32();
    s.joints.push_back(std::move(m));
  }
  if (r.remaining() != 0) throw FormatError(path.string() + ": trailing bytes after heatmap grids");
  return s;
}

std::string fits_csv_header() {
  return "joint,amplitude,mean_x,mean_y,s11,s12,s22,iterations,converged,relative_residual,high_residual";
}

std::string fits_csv_row(std::size_t joint, const FitResult& fit) {
  const auto& g = fit.gaussian;
  using binio::format_double;
  return std::to_string(joint) + "," + format_double(g.amplitude) + "," + format_double(g.mean_x) + "," +
         format_double(g.mean_y) + "," + format_double(g.s11) + "," + format_double(g.s12) + "," +
         format_double(g.s22) + "," + std::to_string(fit.iterations) + "," + (fit.converged ? "1" : "0") +
         "," + format_double(fit.relative_residual) + "," + (fit.high_residual ? "1" : "0");
}

}  // namespace ambiflow::heatmap
