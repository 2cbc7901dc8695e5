#include "ambiflow/nd/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "ambiflow/error.hpp"

namespace ambiflow::nd {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap as_matrix(const Tensor& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

std::string dims(const Var& v) {
  return std::to_string(v.rows()) + "x" + std::to_string(v.cols());
}

[[noreturn]] void shape_fail(const char* op, const Var& a, const Var& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + dims(a) + " and " + dims(b));
}

std::size_t broadcast_dim(const char* op, const Var& a, const Var& b, std::size_t x, std::size_t y) {
  if (x == y) return x;
  if (x == 1) return y;
  if (y == 1) return x;
  shape_fail(op, a, b);
}

template <class F>
Tensor broadcast_apply(const char* op, const Var& a, const Var& b, F f) {
  const Tensor& ta = a.value();
  const Tensor& tb = b.value();
  const std::size_t r = broadcast_dim(op, a, b, ta.rows(), tb.rows());
  const std::size_t c = broadcast_dim(op, a, b, ta.cols(), tb.cols());
  Tensor out = Tensor::zeros(r, c);
  if (ta.rows() == r && ta.cols() == c && tb.rows() == r && tb.cols() == c) {
    const double* pa = ta.data();
    const double* pb = tb.data();
    double* po = out.data();
    for (std::size_t i = 0; i < r * c; ++i) po[i] = f(pa[i], pb[i]);
    return out;
  }
  const std::size_t ra = ta.rows() == 1 ? 0 : ta.cols();
  const std::size_t ca = ta.cols() == 1 ? 0 : 1;
  const std::size_t rb = tb.rows() == 1 ? 0 : tb.cols();
  const std::size_t cb = tb.cols() == 1 ? 0 : 1;
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j)
      out(i, j) = f(ta.data()[i * ra + j * ca], tb.data()[i * rb + j * cb]);
  return out;
}

template <class F>
Tensor map_values(const Tensor& t, F f) {
  Tensor out = t;
  for (double& v : out.values()) v = f(v);
  return out;
}

std::vector<Var> one(Var g) { return {std::move(g)}; }

}  // namespace

// ---------------------------------------------------------------------------
// Var / graph plumbing

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Tensor& Var::mutable_value() {
  if (!node_->is_leaf()) throw InvalidArgument("mutable_value() on a non-leaf node");
  return node_->value;
}

void Var::zero_grad() {
  if (node_->grad.size() == node_->value.size()) {
    node_->grad.fill(0.0);
  } else {
    node_->grad = Tensor(node_->value.shape());
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

Var make_op(const char* op, Tensor value, std::vector<Var> inputs, BackwardFn backward,
            bool twice_differentiable) {
  if (!value.all_finite()) throw NumericError(std::string(op) + ": non-finite result");
  auto node = std::make_shared<Node>();
  node->op = op;
  node->value = std::move(value);
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Var& v) { return v.requires_grad(); });
  if (g_grad_enabled && any) {
    node->requires_grad = true;
    node->backward = std::move(backward);
    node->twice_differentiable = twice_differentiable;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.shared());
  }
  return Var(std::move(node));
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
  Tensor out = broadcast_apply("add", a, b, [](double x, double y) { return x + y; });
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return make_op("add", std::move(out), {a, b},
                 [=](const Var& g, std::span<const bool> needs) -> std::vector<Var> {
                   return {needs[0] ? sum_to(g, ar, ac) : Var(),
                           needs[1] ? sum_to(g, br, bc) : Var()};
                 });
}

Var sub(const Var& a, const Var& b) {
  Tensor out = broadcast_apply("sub", a, b, [](double x, double y) { return x - y; });
  const std::size_t ar = a.rows(), ac = a.cols(), br = b.rows(), bc = b.cols();
  return make_op("sub", std::move(out), {a, b},
                 [=](const Var& g, std::span<const bool> needs) -> std::vector<Var> {
                   return {needs[0] ? sum_to(g, ar, ac) : Var(),
                           needs[1] ? sum_to(neg(g), br, bc) : Var()};
                 });
}

Var mul(const Var& a, const Var& b) {
  Tensor out = broadcast_apply("mul", a, b, [](double x, double y) { return x * y; });
  return make_op("mul", std::move(out), {a, b},
                 [a, b](const Var& g, std::span<const bool> needs) -> std::vector<Var> {
                   return {needs[0] ? sum_to(mul(g, b), a.rows(), a.cols()) : Var(),
                           needs[1] ? sum_to(mul(g, a), b.rows(), b.cols()) : Var()};
                 });
}

Var div(const Var& a, const Var& b) {
  Tensor out = broadcast_apply("div", a, b, [](double x, double y) { return x / y; });
  return make_op("div", std::move(out), {a, b},
                 [a, b](const Var& g, std::span<const bool> needs) -> std::vector<Var> {
                   Var ga, gb;
                   if (needs[0]) ga = sum_to(div(g, b), a.rows(), a.cols());
                   if (needs[1]) gb = sum_to(neg(div(mul(g, a), square(b))), b.rows(), b.cols());
                   return {ga, gb};
                 });
}

Var neg(const Var& a) {
  return make_op("neg", map_values(a.value(), [](double x) { return -x; }), {a},
                 [](const Var& g, std::span<const bool>) { return one(neg(g)); });
}

Var scale(const Var& a, double k) {
  return make_op("scale", map_values(a.value(), [k](double x) { return k * x; }), {a},
                 [k](const Var& g, std::span<const bool>) { return one(scale(g, k)); });
}

Var add_scalar(const Var& a, double k) {
  return make_op("add_scalar", map_values(a.value(), [k](double x) { return x + k; }), {a},
                 [](const Var& g, std::span<const bool>) { return one(g); });
}

// ---------------------------------------------------------------------------
// Linear algebra

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
  const std::size_t m = ta ? a.cols() : a.rows();
  const std::size_t ka = ta ? a.rows() : a.cols();
  const std::size_t kb = tb ? b.cols() : b.rows();
  const std::size_t n = tb ? b.rows() : b.cols();
  if (ka != kb) shape_fail("matmul", a, b);
  Tensor out = Tensor::zeros(m, n);
  MutMap c(out.data(), static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
  const auto ma = as_matrix(a.value());
  const auto mb = as_matrix(b.value());
  if (!ta && !tb) c.noalias() = ma * mb;
  else if (ta && !tb) c.noalias() = ma.transpose() * mb;
  else if (!ta && tb) c.noalias() = ma * mb.transpose();
  else c.noalias() = ma.transpose() * mb.transpose();
  return make_op("matmul", std::move(out), {a, b},
                 [a, b, ta, tb](const Var& g, std::span<const bool> needs) -> std::vector<Var> {
                   Var ga, gb;
                   if (!ta && !tb) {
                     if (needs[0]) ga = matmul(g, b, false, true);
                     if (needs[1]) gb = matmul(a, g, true, false);
                   } else if (ta && !tb) {
                     if (needs[0]) ga = matmul(b, g, false, true);
                     if (needs[1]) gb = matmul(a, g, false, false);
                   } else if (!ta && tb) {
                     if (needs[0]) ga = matmul(g, b, false, false);
                     if (needs[1]) gb = matmul(g, a, true, false);
                   } else {
                     if (needs[0]) ga = matmul(b, g, true, true);
                     if (needs[1]) gb = matmul(g, a, true, true);
                   }
                   return {ga, gb};
                 });
}

Var transpose(const Var& a) {
  Tensor out = Tensor::zeros(a.cols(), a.rows());
  MutMap(out.data(), static_cast<Eigen::Index>(a.cols()), static_cast<Eigen::Index>(a.rows())) =
      as_matrix(a.value()).transpose();
  return make_op("transpose", std::move(out), {a},
                 [](const Var& g, std::span<const bool>) { return one(transpose(g)); });
}

// ---------------------------------------------------------------------------
// Unary

Var exp(const Var& a) {
  return make_op("exp", map_values(a.value(), [](double x) { return std::exp(x); }), {a},
                 [a](const Var& g, std::span<const bool>) { return one(mul(g, exp(a))); });
}

Var log(const Var& a) {
  return make_op("log", map_values(a.value(), [](double x) { return std::log(x); }), {a},
                 [a](const Var& g, std::span<const bool>) { return one(div(g, a)); });
}

Var arctan(const Var& a) {
  return make_op("arctan", map_values(a.value(), [](double x) { return std::atan(x); }), {a},
                 [a](const Var& g, std::span<const bool>) {
                   return one(div(g, add_scalar(square(a), 1.0)));
                 });
}

Var square(const Var& a) {
  return make_op("square", map_values(a.value(), [](double x) { return x * x; }), {a},
                 [a](const Var& g, std::span<const bool>) { return one(scale(mul(g, a), 2.0)); });
}

Var sqrt(const Var& a) {
  Tensor out = map_values(a.value(), [](double x) { return std::sqrt(x); });
  Tensor root = out;
  return make_op(
      "sqrt", std::move(out), {a},
      [root = std::move(root)](const Var& g, std::span<const bool>) {
        // derivative at 0 taken as 0
        Tensor d = broadcast_apply("sqrt_backward", g, Var(root), [](double gv, double r) {
          return r > 0.0 ? 0.5 * gv / r : 0.0;
        });
        return one(Var(std::move(d)));
      },
      false);
}

Var abs(const Var& a) {
  Tensor sign = map_values(a.value(), [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
  return make_op(
      "abs", map_values(a.value(), [](double x) { return std::fabs(x); }), {a},
      [sign = std::move(sign)](const Var& g, std::span<const bool>) {
        return one(Var(broadcast_apply("abs_backward", g, Var(sign),
                                       [](double gv, double s) { return gv * s; })));
      },
      false);
}

Var step_mul(const Var& g, const Var& a, double slope) {
  if (!g.value().same_shape(a.value())) shape_fail("step_mul", g, a);
  Tensor out = g.value();
  const double* pa = a.value().data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i)
    if (!(pa[i] > 0.0)) po[i] *= slope;
  // the step function has zero derivative almost everywhere
  return make_op("step_mul", std::move(out), {g, a},
                 [a, slope](const Var& gg, std::span<const bool> needs) -> std::vector<Var> {
                   return {needs[0] ? step_mul(gg, a, slope) : Var(), Var()};
                 });
}

Var relu(const Var& a) {
  return make_op("relu", map_values(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }), {a},
                 [a](const Var& g, std::span<const bool>) { return one(step_mul(g, a, 0.0)); });
}

Var leaky_relu(const Var& a, double slope) {
  return make_op("leaky_relu",
                 map_values(a.value(), [slope](double x) { return x > 0.0 ? x : slope * x; }), {a},
                 [a, slope](const Var& g, std::span<const bool>) { return one(step_mul(g, a, slope)); });
}

// ---------------------------------------------------------------------------
// Reductions and broadcasting

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t r = a.rows(), c = a.cols();
  return make_op("sum", Tensor::scalar(s), {a},
                 [r, c](const Var& g, std::span<const bool>) { return one(broadcast_to(g, r, c)); });
}

Var mean(const Var& a) {
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var sum_rows(const Var& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros(1, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j] += a.value()(i, j);
  return make_op("sum_rows", std::move(out), {a},
                 [r, c](const Var& g, std::span<const bool>) { return one(broadcast_to(g, r, c)); });
}

Var sum_cols(const Var& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros(r, 1);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += a.value()(i, j);
    out[i] = s;
  }
  return make_op("sum_cols", std::move(out), {a},
                 [r, c](const Var& g, std::span<const bool>) { return one(broadcast_to(g, r, c)); });
}

Var broadcast_to(const Var& a, std::size_t rows, std::size_t cols) {
  if ((a.rows() != rows && a.rows() != 1) || (a.cols() != cols && a.cols() != 1)) {
    throw ShapeError("broadcast_to: cannot broadcast " + dims(a) + " to " + std::to_string(rows) +
                     "x" + std::to_string(cols));
  }
  if (a.rows() == rows && a.cols() == cols) return a;
  Tensor out = Tensor::zeros(rows, cols);
  const Tensor& t = a.value();
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      out(i, j) = t(t.rows() == 1 ? 0 : i, t.cols() == 1 ? 0 : j);
  const std::size_t ar = a.rows(), ac = a.cols();
  return make_op("broadcast_to", std::move(out), {a},
                 [ar, ac](const Var& g, std::span<const bool>) { return one(sum_to(g, ar, ac)); });
}

Var sum_to(const Var& a, std::size_t rows, std::size_t cols) {
  Var out = a;
  if (out.rows() != rows) {
    if (rows != 1) throw ShapeError("sum_to: bad target rows");
    out = sum_rows(out);
  }
  if (out.cols() != cols) {
    if (cols != 1) throw ShapeError("sum_to: bad target cols");
    out = sum_cols(out);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Structural

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t r = parts.front().rows();
  std::size_t c = 0;
  for (const auto& p : parts) {
    if (p.rows() != r) shape_fail("concat_cols", parts.front(), p);
    c += p.cols();
  }
  Tensor out = Tensor::zeros(r, c);
  std::vector<std::size_t> widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(p.value().data() + i * w, w, out.data() + i * c + off);
    off += w;
    widths.push_back(w);
  }
  return make_op("concat_cols", std::move(out), parts,
                 [widths](const Var& g, std::span<const bool> needs) {
                   std::vector<Var> gs(widths.size());
                   std::size_t o = 0;
                   for (std::size_t k = 0; k < widths.size(); ++k) {
                     if (needs[k]) gs[k] = slice_cols(g, o, widths[k]);
                     o += widths[k];
                   }
                   return gs;
                 });
}

Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t c = parts.front().cols();
  std::size_t r = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) shape_fail("concat_rows", parts.front(), p);
    r += p.rows();
  }
  Tensor out = Tensor::zeros(r, c);
  std::vector<std::size_t> heights;
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.value().storage().begin(), p.value().storage().end(), out.data() + off * c);
    off += p.rows();
    heights.push_back(p.rows());
  }
  return make_op("concat_rows", std::move(out), parts,
                 [heights](const Var& g, std::span<const bool> needs) {
                   std::vector<Var> gs(heights.size());
                   std::size_t o = 0;
                   for (std::size_t k = 0; k < heights.size(); ++k) {
                     if (needs[k]) gs[k] = slice_rows(g, o, heights[k]);
                     o += heights[k];
                   }
                   return gs;
                 });
}

Var slice_cols(const Var& a, std::size_t begin, std::size_t count) {
  const std::size_t r = a.rows(), c = a.cols();
  if (begin + count > c) throw ShapeError("slice_cols: range out of bounds for " + dims(a));
  Tensor out = Tensor::zeros(r, count);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(a.value().data() + i * c + begin, count, out.data() + i * count);
  return make_op("slice_cols", std::move(out), {a},
                 [begin, c](const Var& g, std::span<const bool>) { return one(pad_cols(g, begin, c)); });
}

Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  const std::size_t r = a.rows(), c = a.cols();
  if (begin + count > r) throw ShapeError("slice_rows: range out of bounds for " + dims(a));
  Tensor out = Tensor::zeros(count, c);
  std::copy_n(a.value().data() + begin * c, count * c, out.data());
  return make_op("slice_rows", std::move(out), {a},
                 [begin, r](const Var& g, std::span<const bool>) { return one(pad_rows(g, begin, r)); });
}

std::vector<Var> split_cols(const Var& a, const std::vector<std::size_t>& sizes) {
  std::size_t total = 0;
  for (auto s : sizes) total += s;
  if (total != a.cols()) throw ShapeError("split_cols: sizes do not add up to " + dims(a));
  std::vector<Var> out;
  std::size_t off = 0;
  for (auto s : sizes) {
    out.push_back(slice_cols(a, off, s));
    off += s;
  }
  return out;
}

Var pad_cols(const Var& a, std::size_t begin, std::size_t total) {
  const std::size_t r = a.rows(), w = a.cols();
  if (begin + w > total) throw ShapeError("pad_cols: range out of bounds");
  Tensor out = Tensor::zeros(r, total);
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(a.value().data() + i * w, w, out.data() + i * total + begin);
  return make_op("pad_cols", std::move(out), {a},
                 [begin, w](const Var& g, std::span<const bool>) { return one(slice_cols(g, begin, w)); });
}

Var pad_rows(const Var& a, std::size_t begin, std::size_t total) {
  const std::size_t h = a.rows(), c = a.cols();
  if (begin + h > total) throw ShapeError("pad_rows: range out of bounds");
  Tensor out = Tensor::zeros(total, c);
  std::copy_n(a.value().data(), h * c, out.data() + begin * c);
  return make_op("pad_rows", std::move(out), {a},
                 [begin, h](const Var& g, std::span<const bool>) { return one(slice_rows(g, begin, h)); });
}

Var gather_cols(const Var& a, std::vector<std::size_t> index) {
  const std::size_t r = a.rows(), c = a.cols(), n = index.size();
  for (auto k : index)
    if (k >= c) throw ShapeError("gather_cols: index out of range for " + dims(a));
  Tensor out = Tensor::zeros(r, n);
  for (std::size_t i = 0; i < r; ++i) {
    const double* src = a.value().data() + i * c;
    double* dst = out.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) dst[j] = src[index[j]];
  }
  return make_op("gather_cols", std::move(out), {a},
                 [index = std::move(index), c](const Var& g, std::span<const bool>) {
                   return one(scatter_cols(g, index, c));
                 });
}

Var scatter_cols(const Var& a, std::vector<std::size_t> index, std::size_t cols) {
  const std::size_t r = a.rows(), n = a.cols();
  if (index.size() != n) throw ShapeError("scatter_cols: index size mismatch");
  Tensor out = Tensor::zeros(r, cols);
  for (std::size_t i = 0; i < r; ++i) {
    const double* src = a.value().data() + i * n;
    double* dst = out.data() + i * cols;
    for (std::size_t j = 0; j < n; ++j) {
      if (index[j] >= cols) throw ShapeError("scatter_cols: index out of range");
      dst[index[j]] += src[j];
    }
  }
  return make_op("scatter_cols", std::move(out), {a},
                 [index = std::move(index)](const Var& g, std::span<const bool>) {
                   return one(gather_cols(g, index));
                 });
}

Var gather_rows(const Var& a, std::vector<std::size_t> index) {
  const std::size_t r = a.rows(), c = a.cols(), n = index.size();
  Tensor out = Tensor::zeros(n, c);
  for (std::size_t j = 0; j < n; ++j) {
    if (index[j] >= r) throw ShapeError("gather_rows: index out of range for " + dims(a));
    std::copy_n(a.value().data() + index[j] * c, c, out.data() + j * c);
  }
  return make_op("gather_rows", std::move(out), {a},
                 [index = std::move(index), r](const Var& g, std::span<const bool>) {
                   return one(scatter_rows(g, index, r));
                 });
}

Var scatter_rows(const Var& a, std::vector<std::size_t> index, std::size_t rows) {
  const std::size_t n = a.rows(), c = a.cols();
  if (index.size() != n) throw ShapeError("scatter_rows: index size mismatch");
  Tensor out = Tensor::zeros(rows, c);
  for (std::size_t j = 0; j < n; ++j) {
    if (index[j] >= rows) throw ShapeError("scatter_rows: index out of range");
    const double* src = a.value().data() + j * c;
    double* dst = out.data() + index[j] * c;
    for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
  }
  return make_op("scatter_rows", std::move(out), {a},
                 [index = std::move(index)](const Var& g, std::span<const bool>) {
                   return one(gather_rows(g, index));
                 });
}

Var repeat_rows(const Var& a, std::size_t times) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out = Tensor::zeros(r * times, c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t t = 0; t < times; ++t)
      std::copy_n(a.value().data() + i * c, c, out.data() + (i * times + t) * c);
  return make_op("repeat_rows", std::move(out), {a},
                 [times](const Var& g, std::span<const bool>) { return one(segment_sum_rows(g, times)); });
}

Var segment_sum_rows(const Var& a, std::size_t group) {
  const std::size_t r = a.rows(), c = a.cols();
  if (group == 0 || r % group != 0) throw ShapeError("segment_sum_rows: rows not divisible by group");
  const std::size_t n = r / group;
  Tensor out = Tensor::zeros(n, c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* src = a.value().data() + i * c;
    double* dst = out.data() + (i / group) * c;
    for (std::size_t k = 0; k < c; ++k) dst[k] += src[k];
  }
  return make_op("segment_sum_rows", std::move(out), {a},
                 [group](const Var& g, std::span<const bool>) { return one(repeat_rows(g, group)); });
}

Var stop_gradient(const Var& a) { return Var(a.value()); }

Var l1_norm(const Var& a) { return sum(abs(a)); }
Var l2_norm_sq(const Var& a) { return sum(square(a)); }

// ---------------------------------------------------------------------------
// Reverse pass

std::vector<Node*> topological_order(const Var& out) {
  std::vector<Node*> order;
  if (!out.requires_grad()) return order;
  std::unordered_map<Node*, bool> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{out.node(), 0}};
  visited[out.node()] = true;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && !visited[child]) {
        visited[child] = true;
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

namespace {

void accumulate(Tensor& dst, const Tensor& src) {
  if (dst.size() != src.size()) {
    dst = src;
    return;
  }
  double* d = dst.data();
  const double* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

// Runs the reverse sweep; `visit` sees every node together with its total gradient.
template <class Visit>
void reverse_sweep(const Var& out, bool create_graph, Visit visit) {
  if (out.value().size() != 1) {
    throw ShapeError(std::string("backward: output must be scalar, got ") + dims(out));
  }
  const auto order = topological_order(out);
  if (order.empty()) return;
  std::unique_ptr<NoGradGuard> guard;
  if (!create_graph) guard = std::make_unique<NoGradGuard>();

  std::unordered_map<Node*, Var> grads;
  grads.emplace(out.node(), Var(Tensor::scalar(1.0)));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    auto found = grads.find(node);
    if (found == grads.end()) continue;
    Var g = std::move(found->second);
    grads.erase(found);
    visit(node, g);
    if (node->is_leaf()) continue;
    if (create_graph && !node->twice_differentiable) {
      throw NumericError(std::string("second-order differentiation is not supported through op '") +
                         node->op + "'");
    }
    std::unique_ptr<bool[]> needs(new bool[node->inputs.size()]);
    for (std::size_t i = 0; i < node->inputs.size(); ++i) needs[i] = node->inputs[i]->requires_grad;
    auto input_grads = node->backward(g, std::span<const bool>(needs.get(), node->inputs.size()));
    for (std::size_t i = 0; i < node->inputs.size(); ++i) {
      if (!needs[i] || !input_grads[i].defined()) continue;
      Node* in = node->inputs[i].get();
      auto slot = grads.find(in);
      if (slot == grads.end()) {
        grads.emplace(in, std::move(input_grads[i]));
      } else {
        slot->second = add(slot->second, input_grads[i]);
      }
    }
  }
}

}  // namespace

void backward(const Var& out) {
  reverse_sweep(out, false, [](Node* node, const Var& g) {
    if (node->is_leaf()) accumulate(node->grad, g.value());
  });
}

std::vector<Var> grad(const Var& out, const std::vector<Var>& wrt, bool create_graph) {
  std::unordered_map<Node*, std::size_t> wanted;
  for (std::size_t i = 0; i < wrt.size(); ++i) wanted[wrt[i].node()] = i;
  std::vector<Var> result(wrt.size());
  reverse_sweep(out, create_graph, [&](Node* node, const Var& g) {
    auto it = wanted.find(node);
    if (it != wanted.end()) result[it->second] = g;
  });
  for (std::size_t i = 0; i < wrt.size(); ++i) {
    if (!result[i].defined()) result[i] = Var(Tensor(wrt[i].value().shape()));
  }
  return result;
}

Var grad_of_grad(const Var& out, const Var& wrt) {
  Var first = grad(out, {wrt}, true)[0];
  return grad(sum(first), {wrt}, true)[0];
}

}  // namespace ambiflow::nd
