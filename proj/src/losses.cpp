#include "ambiflow/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ambiflow/error.hpp"

namespace ambiflow::losses {

using nd::Var;

void LossWeights::validate() const {
  if (mmd < 0 || det < 0 || mb < 0 || hm < 0 || gen < 0) throw ConfigError("loss weights must be >= 0");
  if (k < 1) throw ConfigError("k must be at least 1");
  if (!(sigma_t > 0.0) || !(mm_per_px > 0.0)) throw ConfigError("sigma_t and mm_per_px must be > 0");
}

Var l2d(const Var& y, const Var& y_hat) {
  if (!y.value().same_shape(y_hat.value())) throw ShapeError("l2d: shape mismatch");
  return nd::scale(nd::l1_norm(nd::sub(y, y_hat)), 1.0 / static_cast<double>(y.rows()));
}

double imq_kernel(std::span<const double> v, std::span<const double> v_hat,
                  std::span<const double> bandwidths) {
  if (v.size() != v_hat.size()) throw ShapeError("imq_kernel: dimension mismatch");
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) d += (v[i] - v_hat[i]) * (v[i] - v_hat[i]);
  double k = 0.0;
  for (double b : bandwidths) k += b / (b + d);
  return k;
}

Var imq_kernel_matrix(const Var& a, const Var& b, std::span<const double> bandwidths) {
  if (a.cols() != b.cols()) throw ShapeError("imq_kernel_matrix: dimension mismatch");
  // ||a_i||^2 + ||b_j||^2 - 2 a_i . b_j
  Var sq_a = nd::sum_cols(nd::square(a));
  Var sq_b = nd::transpose(nd::sum_cols(nd::square(b)));
  Var d = nd::sub(nd::add(sq_a, sq_b), nd::scale(nd::matmul(a, b, false, true), 2.0));
  d = nd::relu(d);  // rounding can push exact zeros slightly negative
  Var k;
  for (double bw : bandwidths) {
    Var term = nd::div(Var(nd::Tensor::scalar(bw)), nd::add_scalar(d, bw));
    k = k.defined() ? nd::add(k, term) : term;
  }
  return k;
}

Var mmd_unbiased(const Var& v, const Var& v_hat, std::span<const double> bandwidths) {
  const std::size_t n = v.rows();
  if (n < 2) throw InvalidArgument("mmd_unbiased: at least two samples are required");
  if (v_hat.rows() != n || v_hat.cols() != v.cols()) throw ShapeError("mmd_unbiased: sample sets differ in shape");
  nd::Tensor off_diag(nd::Shape{n, n}, 1.0);
  for (std::size_t i = 0; i < n; ++i) off_diag(i, i) = 0.0;
  const Var mask(std::move(off_diag));
  const double nn1 = static_cast<double>(n) * static_cast<double>(n - 1);
  const double n2 = static_cast<double>(n) * static_cast<double>(n);
  Var kxx = nd::sum(nd::mul(imq_kernel_matrix(v, v, bandwidths), mask));
  Var kyy = nd::sum(nd::mul(imq_kernel_matrix(v_hat, v_hat, bandwidths), mask));
  Var kxy = nd::sum(imq_kernel_matrix(v, v_hat, bandwidths));
  return nd::sub(nd::scale(nd::add(kxx, kyy), 1.0 / nn1), nd::scale(kxy, 2.0 / n2));
}

Var l_det(const Var& x, const Var& x_det) {
  if (!x.value().same_shape(x_det.value())) throw ShapeError("l_det: shape mismatch");
  return nd::scale(nd::l1_norm(nd::sub(x, x_det)), 1.0 / static_cast<double>(x.rows()));
}

double mpjpe_flat(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size() || a.size() % 3 != 0) throw ShapeError("mpjpe: pose length mismatch");
  const std::size_t j = a.size() / 3;
  double total = 0.0;
  for (std::size_t i = 0; i < j; ++i) {
    const double dx = a[3 * i] - b[3 * i], dy = a[3 * i + 1] - b[3 * i + 1], dz = a[3 * i + 2] - b[3 * i + 2];
    total += std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return total / static_cast<double>(j);
}

std::vector<std::size_t> select_top_k(const nd::Tensor& hyps, std::span<const double> x, std::size_t k) {
  const std::size_t m = hyps.rows(), d = hyps.cols();
  if (k < 1 || k > m) throw InvalidArgument("l_mb: k must be in [1, number of hypotheses]");
  if (x.size() != d) throw ShapeError("l_mb: pose dimension mismatch");
  std::vector<double> err(m);
  for (std::size_t i = 0; i < m; ++i) err[i] = mpjpe_flat({hyps.data() + i * d, d}, x);
  std::vector<std::size_t> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return err[a] < err[b]; });
  idx.resize(k);
  return idx;
}

Var l_mb(const Var& hyps, const Var& x, std::size_t k) {
  if (x.rows() != 1) throw ShapeError("l_mb: expects a single ground-truth pose");
  return l_mb_batch(hyps, x, hyps.rows(), k);
}

Var l_mb_batch(const Var& hyps, const Var& x, std::size_t per_sample, std::size_t k) {
  const std::size_t b = x.rows(), d = x.cols();
  if (hyps.rows() != b * per_sample || hyps.cols() != d) throw ShapeError("l_mb: hypothesis block shape mismatch");
  if (k < 1 || k > per_sample) throw InvalidArgument("l_mb: k must be in [1, number of hypotheses]");
  std::vector<std::size_t> chosen;
  chosen.reserve(b * k);
  for (std::size_t s = 0; s < b; ++s) {
    nd::Tensor block = nd::Tensor::zeros(per_sample, d);
    std::copy_n(hyps.value().data() + s * per_sample * d, per_sample * d, block.data());
    for (auto i : select_top_k(block, {x.value().data() + s * d, d}, k)) chosen.push_back(s * per_sample + i);
  }
  Var best_mean = nd::segment_mean_rows(nd::gather_rows(hyps, std::move(chosen)), k);
  return nd::scale(nd::l1_norm(nd::sub(x, best_mean)), 1.0 / static_cast<double>(b));
}

double l_hm(const Eigen::Matrix2d& sigma, const Eigen::Matrix2d& sigma_hat, double sigma_t) {
  const bool uncertain = std::sqrt(sigma(0, 0)) > sigma_t || std::sqrt(sigma(1, 1)) > sigma_t;
  if (!uncertain) return 0.0;
  const double a = std::max(0.0, sigma(0, 0) - sigma_hat(0, 0));
  const double c = std::max(0.0, sigma(1, 1) - sigma_hat(1, 1));
  const double o = sigma(0, 1) - sigma_hat(0, 1);
  return std::sqrt(a * a + c * c + o * o);
}

nd::Tensor HeatmapCovariances::mask(double sigma_t) const {
  nd::Tensor m(s11.shape());
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = (std::sqrt(s11[i]) > sigma_t || std::sqrt(s22[i]) > sigma_t) ? 1.0 : 0.0;
  }
  return m;
}

HeatmapCovariances HeatmapCovariances::from_gaussians(
    std::span<const std::vector<heatmap::Gaussian2D>> per_sample) {
  const std::size_t b = per_sample.size();
  const std::size_t j = b ? per_sample.front().size() : 0;
  HeatmapCovariances c{nd::Tensor::zeros(b, j), nd::Tensor::zeros(b, j), nd::Tensor::zeros(b, j)};
  for (std::size_t s = 0; s < b; ++s) {
    if (per_sample[s].size() != j) throw ShapeError("heatmap covariances: ragged joint lists");
    for (std::size_t i = 0; i < j; ++i) {
      c.s11(s, i) = per_sample[s][i].s11;
      c.s12(s, i) = per_sample[s][i].s12;
      c.s22(s, i) = per_sample[s][i].s22;
    }
  }
  return c;
}

Var l_hm_batch(const Var& hyps, std::size_t per_sample, const HeatmapCovariances& covs,
               const LossWeights& weights) {
  const std::size_t b = covs.s11.rows(), j = covs.s11.cols();
  if (per_sample < 2) throw InvalidArgument("l_hm: at least two hypotheses per sample are required");
  if (hyps.rows() != b * per_sample || hyps.cols() != 3 * j) throw ShapeError("l_hm: hypothesis block shape mismatch");
  std::vector<std::size_t> xs(j), ys(j);
  for (std::size_t i = 0; i < j; ++i) {
    xs[i] = 3 * i;
    ys[i] = 3 * i + 1;
  }
  Var px = nd::gather_cols(hyps, xs);
  Var py = nd::gather_cols(hyps, ys);
  Var cx = nd::sub(px, nd::repeat_rows(nd::segment_mean_rows(px, per_sample), per_sample));
  Var cy = nd::sub(py, nd::repeat_rows(nd::segment_mean_rows(py, per_sample), per_sample));
  // metres^2 -> mm^2 -> px^2, unbiased estimator
  const double to_px = 1000.0 / weights.mm_per_px;
  const double k = to_px * to_px / static_cast<double>(per_sample - 1);
  Var hxx = nd::scale(nd::segment_sum_rows(nd::square(cx), per_sample), k);
  Var hyy = nd::scale(nd::segment_sum_rows(nd::square(cy), per_sample), k);
  Var hxy = nd::scale(nd::segment_sum_rows(nd::mul(cx, cy), per_sample), k);
  Var t11 = nd::square(nd::relu(nd::sub(Var(covs.s11), hxx)));
  Var t22 = nd::square(nd::relu(nd::sub(Var(covs.s22), hyy)));
  Var t12 = nd::square(nd::sub(Var(covs.s12), hxy));
  Var per_joint = nd::mul(nd::sqrt(nd::add(nd::add(t11, t22), t12)), Var(covs.mask(weights.sigma_t)));
  return nd::mean(per_joint);
}

Var total_nf_loss(const LossParts& parts, const LossWeights& w) {
  Var total = Var::scalar(0.0);
  auto acc = [&](const Var& part, double weight) {
    if (part.defined() && weight != 0.0) total = nd::add(total, nd::scale(part, weight));
  };
  acc(parts.l2d, 1.0);
  acc(parts.gen, w.gen);
  acc(parts.mmd, w.mmd);
  acc(parts.det, w.det);
  acc(parts.mb, w.mb);
  acc(parts.hm, w.hm);
  return total;
}

}  // namespace ambiflow::losses
