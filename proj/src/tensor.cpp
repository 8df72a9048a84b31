#include "ovd/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>

#include "ovd/error.hpp"

namespace ovd {

namespace {

using Impl = detail::TensorImpl;
using ImplPtr = std::shared_ptr<Impl>;

thread_local Tape* g_active_tape = nullptr;

void check_finite(const Impl& t, const char* op) {
  for (const double v : t.value) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string(op) + ": non-finite value in result");
    }
  }
}

void require(bool cond, const char* op, const std::string& what) {
  if (!cond) throw ShapeError(std::string(op) + ": " + what);
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.ndim() != 2) {
    throw ShapeError(std::string(op) + ": expected rank-2 tensor, got shape " +
                     shape_str(t.shape()));
  }
}

bool tracking(const Tensor& t) { return t.requires_grad() && Tape::active() != nullptr; }

// Creates the output tensor of an op, runs the finite check, and records the
// backward closure if any input participates in gradient flow.
Tensor finish(const char* op, Shape shape, std::vector<double> value, bool track,
              std::function<void(const ImplPtr& out)> make_backward) {
  Tensor out = make_tensor(std::move(shape), std::move(value), false);
  check_finite(*out.impl(), op);
  if (track) {
    out.set_requires_grad(true);
    ImplPtr out_impl = out.impl();
    Tape::active()->record([out_impl, fn = std::move(make_backward)]() {
      if (out_impl->grad.empty()) return;  // nothing flowed into this node
      fn(out_impl);
    });
    // Re-wrap: the recorded lambda needs the out impl; simplest is capturing
    // both and calling fn(out) at run time.
  }
  return out;
}

// Elementwise unary helper: y = f(x), dx += dfdx(x, y) * dy.
Tensor unary_op(const char* op, const Tensor& x, const std::function<double(double)>& f,
                const std::function<double(double, double)>& dfdx) {
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::int64_t i = 0; i < x.numel(); ++i) out[static_cast<std::size_t>(i)] = f(xv[static_cast<std::size_t>(i)]);
  const bool track = tracking(x);
  ImplPtr xi = x.impl();
  return finish(op, x.shape(), std::move(out), track, [xi, dfdx](const ImplPtr& o) {
    auto& xg = xi->grad_buf();
    for (std::size_t i = 0; i < xg.size(); ++i) {
      xg[i] += dfdx(xi->value[i], o->value[i]) * o->grad[i];
    }
  });
}

// Elementwise binary helper on identical shapes.
Tensor binary_op(const char* op, const Tensor& a, const Tensor& b,
                 const std::function<double(double, double)>& f,
                 const std::function<double(double, double, double)>& dfda,
                 const std::function<double(double, double, double)>& dfdb) {
  require(a.shape() == b.shape(), op,
          "shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.numel());
  const auto av = a.values();
  const auto bv = b.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(av[i], bv[i]);
  const bool track = tracking(a) || tracking(b);
  ImplPtr ai = a.impl();
  ImplPtr bi = b.impl();
  const bool need_a = a.requires_grad();
  const bool need_b = b.requires_grad();
  return finish(op, a.shape(), std::move(out), track,
                [ai, bi, dfda, dfdb, need_a, need_b](const ImplPtr& o) {
                  if (need_a) {
                    auto& ag = ai->grad_buf();
                    for (std::size_t i = 0; i < ag.size(); ++i) {
                      ag[i] += dfda(ai->value[i], bi->value[i], o->value[i]) * o->grad[i];
                    }
                  }
                  if (need_b) {
                    auto& bg = bi->grad_buf();
                    for (std::size_t i = 0; i < bg.size(); ++i) {
                      bg[i] += dfdb(ai->value[i], bi->value[i], o->value[i]) * o->grad[i];
                    }
                  }
                });
}

const SlotMask* check_mask(const Tensor& x, const SlotMask* valid, const char* op) {
  if (valid == nullptr) return nullptr;
  if (static_cast<std::int64_t>(valid->size()) != x.cols()) {
    throw ShapeError(std::string(op) + ": mask length " + std::to_string(valid->size()) +
                     " != column count " + std::to_string(x.cols()));
  }
  bool any = false;
  for (const auto m : *valid) any = any || (m != 0);
  if (!any) throw MaskError(std::string(op) + ": mask has no valid columns");
  return valid;
}

using EMat = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using EMatMut = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

}  // namespace

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (const auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// ---- Tensor ----

Tensor make_tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  for (const auto d : shape) {
    if (d <= 0) throw ShapeError("tensor: non-positive extent in shape " + shape_str(shape));
  }
  if (shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                     std::to_string(data.size()));
  }
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->value = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) {
  const auto n = shape_numel(shape);
  return make_tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), 0.0), false);
}

Tensor Tensor::full(Shape shape, double v) {
  const auto n = shape_numel(shape);
  Tensor t = make_tensor(std::move(shape), std::vector<double>(static_cast<std::size_t>(n), v), false);
  check_finite(*t.impl(), "full");
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> data) {
  Tensor t = make_tensor(std::move(shape), std::move(data), false);
  check_finite(*t.impl(), "from");
  return t;
}

Tensor Tensor::scalar(double v) { return full({1, 1}, v); }

Tensor Tensor::row(std::vector<double> data) {
  const auto n = static_cast<std::int64_t>(data.size());
  return from({1, n}, std::move(data));
}

Tensor Tensor::column(std::vector<double> data) {
  const auto n = static_cast<std::int64_t>(data.size());
  return from({n, 1}, std::move(data));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const auto r = static_cast<std::int64_t>(rows.size());
  if (r == 0) throw ShapeError("matrix: empty row list");
  const auto c = static_cast<std::int64_t>(rows.begin()->size());
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(r * c));
  for (const auto& row : rows) {
    if (static_cast<std::int64_t>(row.size()) != c) throw ShapeError("matrix: ragged rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return from({r, c}, std::move(data));
}

const Shape& Tensor::shape() const { return impl_->shape; }
std::int64_t Tensor::ndim() const { return static_cast<std::int64_t>(impl_->shape.size()); }
std::int64_t Tensor::dim(std::int64_t i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(impl_->value.size()); }

std::int64_t Tensor::rows() const {
  require_rank2(*this, "rows");
  return impl_->shape[0];
}

std::int64_t Tensor::cols() const {
  require_rank2(*this, "cols");
  return impl_->shape[1];
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item: tensor has " + std::to_string(numel()) + " elements");
  return impl_->value[0];
}

double Tensor::at(std::int64_t r, std::int64_t c) const {
  require_rank2(*this, "at");
  return impl_->value[static_cast<std::size_t>(r * cols() + c)];
}

std::span<const double> Tensor::values() const { return impl_->value; }

std::vector<double>& Tensor::mutable_values() { return impl_->value; }

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool b) {
  impl_->requires_grad = b;
  return *this;
}

double Tensor::grad_at(std::int64_t r, std::int64_t c) const {
  require_rank2(*this, "grad_at");
  if (impl_->grad.empty()) return 0.0;
  return impl_->grad[static_cast<std::size_t>(r * cols() + c)];
}

std::vector<double> Tensor::grad_vector() const {
  if (impl_->grad.empty()) return std::vector<double>(impl_->value.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const {
  return make_tensor(impl_->shape, impl_->value, false);
}

Tensor Tensor::clone() const {
  Tensor t = make_tensor(impl_->shape, impl_->value, false);
  t.set_requires_grad(impl_->requires_grad);
  return t;
}

// ---- Tape ----

Tape::Tape() {
  prev_ = g_active_tape;
  g_active_tape = this;
}

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::record(std::function<void()> fn) { entries_.push_back(std::move(fn)); }

void Tape::run_backward(const Tensor& loss) {
  if (loss.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
  }
  loss.impl()->grad_buf()[0] += 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
  entries_.clear();
}

void backward(const Tensor& loss) {
  Tape* tape = Tape::active();
  if (tape == nullptr) throw ContractError("backward: no active tape");
  tape->run_backward(loss);
}

// ---- elementwise ops ----

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double out) { return -out / y; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op("add_scalar", x, [c](double v) { return v + c; },
                  [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double c) {
  return unary_op("mul_scalar", x, [c](double v) { return v * c; },
                  [c](double, double) { return c; });
}

Tensor pow_scalar(const Tensor& x, double p) {
  return unary_op("pow_scalar", x, [p](double v) { return std::pow(v, p); },
                  [p](double v, double) { return p * std::pow(v, p - 1.0); });
}

Tensor neg(const Tensor& x) {
  return unary_op("neg", x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor exp(const Tensor& x) {
  return unary_op("exp", x, [](double v) { return std::exp(v); },
                  [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op("log", x, [](double v) { return std::log(v); },
                  [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary_op("sqrt", x, [](double v) { return std::sqrt(v); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& x) {
  return unary_op("abs", x, [](double v) { return std::abs(v); },
                  [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

namespace {
double sigmoid_scalar(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}
}  // namespace

Tensor sigmoid(const Tensor& x) {
  return unary_op("sigmoid", x, sigmoid_scalar,
                  [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& x) {
  return unary_op(
      "silu", x, [](double v) { return v * sigmoid_scalar(v); },
      [](double v, double) {
        const double s = sigmoid_scalar(v);
        return s * (1.0 + v * (1.0 - s));
      });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  return unary_op(
      "clamp", x, [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

Tensor inverse_sigmoid(const Tensor& x, double eps) {
  return unary_op(
      "inverse_sigmoid", x,
      [eps](double v) {
        const double c = std::min(std::max(v, eps), 1.0 - eps);
        return std::log(c) - std::log(1.0 - c);
      },
      [eps](double v, double) {
        if (v <= eps || v >= 1.0 - eps) return 0.0;
        return 1.0 / (v * (1.0 - v));
      });
}

// ---- structural ops ----

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul");
  require_rank2(b, "matmul");
  const std::int64_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(static_cast<std::size_t>(m * n));
  {
    EMat ma(a.values().data(), m, k);
    EMat mb(b.values().data(), k, n);
    EMatMut mo(out.data(), m, n);
    mo.noalias() = ma * mb;
  }
  const bool track = tracking(a) || tracking(b);
  ImplPtr ai = a.impl();
  ImplPtr bi = b.impl();
  const bool need_a = a.requires_grad();
  const bool need_b = b.requires_grad();
  return finish("matmul", {m, n}, std::move(out), track,
                [ai, bi, m, k, n, need_a, need_b](const ImplPtr& o) {
                  EMat mo(o->grad.data(), m, n);
                  if (need_a) {
                    EMat mb(bi->value.data(), k, n);
                    EMatMut ga(ai->grad_buf().data(), m, k);
                    ga.noalias() += mo * mb.transpose();
                  }
                  if (need_b) {
                    EMat ma(ai->value.data(), m, k);
                    EMatMut gb(bi->grad_buf().data(), k, n);
                    gb.noalias() += ma.transpose() * mo;
                  }
                });
}

Tensor transpose(const Tensor& x) {
  require_rank2(x, "transpose");
  const std::int64_t m = x.rows(), n = x.cols();
  std::vector<double> out(static_cast<std::size_t>(m * n));
  const auto xv = x.values();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      out[static_cast<std::size_t>(j * m + i)] = xv[static_cast<std::size_t>(i * n + j)];
  ImplPtr xi = x.impl();
  return finish("transpose", {n, m}, std::move(out), tracking(x), [xi, m, n](const ImplPtr& o) {
    auto& xg = xi->grad_buf();
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        xg[static_cast<std::size_t>(i * n + j)] += o->grad[static_cast<std::size_t>(j * m + i)];
  });
}

Tensor softmax_rows(const Tensor& x, const SlotMask* valid) {
  require_rank2(x, "softmax_rows");
  valid = check_mask(x, valid, "softmax_rows");
  const std::int64_t m = x.rows(), n = x.cols();
  std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
  const auto xv = x.values();
  for (std::int64_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < n; ++j) {
      if (valid && !(*valid)[static_cast<std::size_t>(j)]) continue;
      mx = std::max(mx, xv[static_cast<std::size_t>(i * n + j)]);
    }
    double denom = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      if (valid && !(*valid)[static_cast<std::size_t>(j)]) continue;
      const double e = std::exp(xv[static_cast<std::size_t>(i * n + j)] - mx);
      out[static_cast<std::size_t>(i * n + j)] = e;
      denom += e;
    }
    for (std::int64_t j = 0; j < n; ++j) {
      if (valid && !(*valid)[static_cast<std::size_t>(j)]) continue;
      out[static_cast<std::size_t>(i * n + j)] /= denom;
    }
  }
  ImplPtr xi = x.impl();
  SlotMask mask = valid ? *valid : SlotMask();
  return finish("softmax_rows", {m, n}, std::move(out), tracking(x),
                [xi, mask, m, n](const ImplPtr& o) {
                  auto& xg = xi->grad_buf();
                  for (std::int64_t i = 0; i < m; ++i) {
                    double dot = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) {
                      if (!mask.empty() && !mask[static_cast<std::size_t>(j)]) continue;
                      const auto k = static_cast<std::size_t>(i * n + j);
                      dot += o->grad[k] * o->value[k];
                    }
                    for (std::int64_t j = 0; j < n; ++j) {
                      if (!mask.empty() && !mask[static_cast<std::size_t>(j)]) continue;
                      const auto k = static_cast<std::size_t>(i * n + j);
                      xg[k] += o->value[k] * (o->grad[k] - dot);
                    }
                  }
                });
}

Tensor rowmax(const Tensor& x, const SlotMask* valid) {
  require_rank2(x, "rowmax");
  valid = check_mask(x, valid, "rowmax");
  const std::int64_t m = x.rows(), n = x.cols();
  std::vector<double> out(static_cast<std::size_t>(m));
  std::vector<std::int64_t> argmax(static_cast<std::size_t>(m));
  const auto xv = x.values();
  for (std::int64_t i = 0; i < m; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    std::int64_t arg = -1;
    for (std::int64_t j = 0; j < n; ++j) {
      if (valid && !(*valid)[static_cast<std::size_t>(j)]) continue;
      const double v = xv[static_cast<std::size_t>(i * n + j)];
      if (v > best) {
        best = v;
        arg = j;
      }
    }
    out[static_cast<std::size_t>(i)] = best;
    argmax[static_cast<std::size_t>(i)] = arg;
  }
  ImplPtr xi = x.impl();
  return finish("rowmax", {m, 1}, std::move(out), tracking(x),
                [xi, argmax, n](const ImplPtr& o) {
                  auto& xg = xi->grad_buf();
                  for (std::size_t i = 0; i < argmax.size(); ++i) {
                    xg[i * static_cast<std::size_t>(n) + static_cast<std::size_t>(argmax[i])] +=
                        o->grad[i];
                  }
                });
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  require_rank2(x, "l2_normalize_rows");
  if (eps <= 0.0) throw ContractError("l2_normalize_rows: eps must be positive");
  const std::int64_t m = x.rows(), n = x.cols();
  std::vector<double> out(static_cast<std::size_t>(m * n));
  std::vector<double> norms(static_cast<std::size_t>(m));
  const auto xv = x.values();
  for (std::int64_t i = 0; i < m; ++i) {
    double sq = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      const double v = xv[static_cast<std::size_t>(i * n + j)];
      sq += v * v;
    }
    const double norm = std::max(std::sqrt(sq), eps);
    norms[static_cast<std::size_t>(i)] = norm;
    for (std::int64_t j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i * n + j)] = xv[static_cast<std::size_t>(i * n + j)] / norm;
  }
  ImplPtr xi = x.impl();
  return finish("l2_normalize_rows", {m, n}, std::move(out), tracking(x),
                [xi, norms, eps, m, n](const ImplPtr& o) {
                  auto& xg = xi->grad_buf();
                  for (std::int64_t i = 0; i < m; ++i) {
                    const double norm = norms[static_cast<std::size_t>(i)];
                    if (norm <= eps) {
                      // Row norm was clamped: y = x / eps, constant denominator.
                      for (std::int64_t j = 0; j < n; ++j) {
                        const auto k = static_cast<std::size_t>(i * n + j);
                        xg[k] += o->grad[k] / eps;
                      }
                      continue;
                    }
                    double dot = 0.0;
                    for (std::int64_t j = 0; j < n; ++j) {
                      const auto k = static_cast<std::size_t>(i * n + j);
                      dot += o->grad[k] * o->value[k];
                    }
                    for (std::int64_t j = 0; j < n; ++j) {
                      const auto k = static_cast<std::size_t>(i * n + j);
                      xg[k] += (o->grad[k] - o->value[k] * dot) / norm;
                    }
                  }
                });
}

Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank2(x, "layer_norm_rows");
  const std::int64_t m = x.rows(), n = x.cols();
  require(gain.ndim() == 2 && gain.rows() == 1 && gain.cols() == n, "layer_norm_rows",
          "gain must be [1," + std::to_string(n) + "]");
  require(bias.ndim() == 2 && bias.rows() == 1 && bias.cols() == n, "layer_norm_rows",
          "bias must be [1," + std::to_string(n) + "]");
  std::vector<double> out(static_cast<std::size_t>(m * n));
  std::vector<double> xhat(static_cast<std::size_t>(m * n));
  std::vector<double> inv_std(static_cast<std::size_t>(m));
  const auto xv = x.values();
  const auto gv = gain.values();
  const auto bv = bias.values();
  for (std::int64_t i = 0; i < m; ++i) {
    double mean = 0.0;
    for (std::int64_t j = 0; j < n; ++j) mean += xv[static_cast<std::size_t>(i * n + j)];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t j = 0; j < n; ++j) {
      const double d = xv[static_cast<std::size_t>(i * n + j)] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(i)] = is;
    for (std::int64_t j = 0; j < n; ++j) {
      const auto k = static_cast<std::size_t>(i * n + j);
      xhat[k] = (xv[k] - mean) * is;
      out[k] = xhat[k] * gv[static_cast<std::size_t>(j)] + bv[static_cast<std::size_t>(j)];
    }
  }
  const bool track = tracking(x) || tracking(gain) || tracking(bias);
  ImplPtr xi = x.impl();
  ImplPtr gi = gain.impl();
  ImplPtr bi = bias.impl();
  const bool need_x = x.requires_grad();
  const bool need_g = gain.requires_grad();
  const bool need_b = bias.requires_grad();
  return finish("layer_norm_rows", {m, n}, std::move(out), track,
                [xi, gi, bi, xhat, inv_std, m, n, need_x, need_g, need_b](const ImplPtr& o) {
                  if (need_g) {
                    auto& gg = gi->grad_buf();
                    for (std::int64_t j = 0; j < n; ++j) {
                      double acc = 0.0;
                      for (std::int64_t i = 0; i < m; ++i) {
                        const auto k = static_cast<std::size_t>(i * n + j);
                        acc += o->grad[k] * xhat[k];
                      }
                      gg[static_cast<std::size_t>(j)] += acc;
                    }
                  }
                  if (need_b) {
                    auto& bg = bi->grad_buf();
                    for (std::int64_t j = 0; j < n; ++j) {
                      double acc = 0.0;
                      for (std::int64_t i = 0; i < m; ++i)
                        acc += o->grad[static_cast<std::size_t>(i * n + j)];
                      bg[static_cast<std::size_t>(j)] += acc;
                    }
                  }
                  if (need_x) {
                    auto& xg = xi->grad_buf();
                    const double inv_n = 1.0 / static_cast<double>(n);
                    for (std::int64_t i = 0; i < m; ++i) {
                      double mean_dxhat = 0.0;
                      double mean_dxhat_xhat = 0.0;
                      for (std::int64_t j = 0; j < n; ++j) {
                        const auto k = static_cast<std::size_t>(i * n + j);
                        const double dxh = o->grad[k] * gi->value[static_cast<std::size_t>(j)];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * xhat[k];
                      }
                      mean_dxhat *= inv_n;
                      mean_dxhat_xhat *= inv_n;
                      const double is = inv_std[static_cast<std::size_t>(i)];
                      for (std::int64_t j = 0; j < n; ++j) {
                        const auto k = static_cast<std::size_t>(i * n + j);
                        const double dxh = o->grad[k] * gi->value[static_cast<std::size_t>(j)];
                        xg[k] += is * (dxh - mean_dxhat - xhat[k] * mean_dxhat_xhat);
                      }
                    }
                  }
                });
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (const double v : x.values()) acc += v;
  ImplPtr xi = x.impl();
  return finish("sum", {1, 1}, {acc}, tracking(x), [xi](const ImplPtr& o) {
    auto& xg = xi->grad_buf();
    for (auto& g : xg) g += o->grad[0];
  });
}

Tensor sum_rows(const Tensor& x) {
  require_rank2(x, "sum_rows");
  const std::int64_t m = x.rows(), n = x.cols();
  std::vector<double> out(static_cast<std::size_t>(m), 0.0);
  const auto xv = x.values();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i)] += xv[static_cast<std::size_t>(i * n + j)];
  ImplPtr xi = x.impl();
  return finish("sum_rows", {m, 1}, std::move(out), tracking(x), [xi, m, n](const ImplPtr& o) {
    auto& xg = xi->grad_buf();
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j)
        xg[static_cast<std::size_t>(i * n + j)] += o->grad[static_cast<std::size_t>(i)];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows: empty part list");
  const std::int64_t n = parts.front().cols();
  std::int64_t m = 0;
  bool track = false;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows");
    if (p.cols() != n) throw ShapeError("concat_rows: column count mismatch");
    m += p.rows();
    track = track || tracking(p);
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(m * n));
  for (const auto& p : parts) {
    const auto pv = p.values();
    out.insert(out.end(), pv.begin(), pv.end());
  }
  std::vector<ImplPtr> impls;
  std::vector<bool> needs;
  impls.reserve(parts.size());
  for (const auto& p : parts) {
    impls.push_back(p.impl());
    needs.push_back(p.requires_grad());
  }
  return finish("concat_rows", {m, n}, std::move(out), track, [impls, needs](const ImplPtr& o) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < impls.size(); ++p) {
      const std::size_t len = impls[p]->value.size();
      if (needs[p]) {
        auto& g = impls[p]->grad_buf();
        for (std::size_t i = 0; i < len; ++i) g[i] += o->grad[off + i];
      }
      off += len;
    }
  });
}

Tensor slice_cols(const Tensor& x, std::int64_t first, std::int64_t count) {
  require_rank2(x, "slice_cols");
  const std::int64_t m = x.rows(), n = x.cols();
  if (first < 0 || count <= 0 || first + count > n) {
    throw ShapeError("slice_cols: range [" + std::to_string(first) + "," +
                     std::to_string(first + count) + ") out of " + std::to_string(n) + " columns");
  }
  std::vector<double> out(static_cast<std::size_t>(m * count));
  const auto xv = x.values();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < count; ++j)
      out[static_cast<std::size_t>(i * count + j)] = xv[static_cast<std::size_t>(i * n + first + j)];
  ImplPtr xi = x.impl();
  return finish("slice_cols", {m, count}, std::move(out), tracking(x),
                [xi, first, count, m, n](const ImplPtr& o) {
                  auto& xg = xi->grad_buf();
                  for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < count; ++j)
                      xg[static_cast<std::size_t>(i * n + first + j)] +=
                          o->grad[static_cast<std::size_t>(i * count + j)];
                });
}

Tensor gather_rows(const Tensor& x, std::vector<std::int64_t> idx) {
  require_rank2(x, "gather_rows");
  const std::int64_t m = x.rows(), n = x.cols();
  for (const auto i : idx) {
    if (i < 0 || i >= m) {
      throw ShapeError("gather_rows: index " + std::to_string(i) + " out of " + std::to_string(m) +
                       " rows");
    }
  }
  const auto r = static_cast<std::int64_t>(idx.size());
  if (r == 0) throw ContractError("gather_rows: empty index list");
  std::vector<double> out(static_cast<std::size_t>(r * n));
  const auto xv = x.values();
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i * n + j)] =
          xv[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)] * n + j)];
  ImplPtr xi = x.impl();
  return finish("gather_rows", {r, n}, std::move(out), tracking(x),
                [xi, idx, n](const ImplPtr& o) {
                  auto& xg = xi->grad_buf();
                  for (std::size_t i = 0; i < idx.size(); ++i)
                    for (std::int64_t j = 0; j < n; ++j)
                      xg[static_cast<std::size_t>(idx[i] * n + j)] +=
                          o->grad[i * static_cast<std::size_t>(n) + static_cast<std::size_t>(j)];
                });
}

Tensor add_rowvec(const Tensor& x, const Tensor& v) {
  require_rank2(x, "add_rowvec");
  const std::int64_t m = x.rows(), n = x.cols();
  require(v.ndim() == 2 && v.rows() == 1 && v.cols() == n, "add_rowvec",
          "vector must be [1," + std::to_string(n) + "], got " + shape_str(v.shape()));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  const auto xv = x.values();
  const auto vv = v.values();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i * n + j)] =
          xv[static_cast<std::size_t>(i * n + j)] + vv[static_cast<std::size_t>(j)];
  const bool track = tracking(x) || tracking(v);
  ImplPtr xi = x.impl();
  ImplPtr vi = v.impl();
  const bool need_x = x.requires_grad();
  const bool need_v = v.requires_grad();
  return finish("add_rowvec", {m, n}, std::move(out), track,
                [xi, vi, m, n, need_x, need_v](const ImplPtr& o) {
                  if (need_x) {
                    auto& xg = xi->grad_buf();
                    for (std::size_t k = 0; k < xg.size(); ++k) xg[k] += o->grad[k];
                  }
                  if (need_v) {
                    auto& vg = vi->grad_buf();
                    for (std::int64_t i = 0; i < m; ++i)
                      for (std::int64_t j = 0; j < n; ++j)
                        vg[static_cast<std::size_t>(j)] += o->grad[static_cast<std::size_t>(i * n + j)];
                  }
                });
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  require_rank2(x, "scale_rows");
  const std::int64_t m = x.rows(), n = x.cols();
  require(s.ndim() == 2 && s.rows() == m && s.cols() == 1, "scale_rows",
          "scale must be [" + std::to_string(m) + ",1], got " + shape_str(s.shape()));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  const auto xv = x.values();
  const auto sv = s.values();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      out[static_cast<std::size_t>(i * n + j)] =
          xv[static_cast<std::size_t>(i * n + j)] * sv[static_cast<std::size_t>(i)];
  const bool track = tracking(x) || tracking(s);
  ImplPtr xi = x.impl();
  ImplPtr si = s.impl();
  const bool need_x = x.requires_grad();
  const bool need_s = s.requires_grad();
  return finish("scale_rows", {m, n}, std::move(out), track,
                [xi, si, m, n, need_x, need_s](const ImplPtr& o) {
                  if (need_x) {
                    auto& xg = xi->grad_buf();
                    for (std::int64_t i = 0; i < m; ++i)
                      for (std::int64_t j = 0; j < n; ++j)
                        xg[static_cast<std::size_t>(i * n + j)] +=
                            o->grad[static_cast<std::size_t>(i * n + j)] *
                            si->value[static_cast<std::size_t>(i)];
                  }
                  if (need_s) {
                    auto& sg = si->grad_buf();
                    for (std::int64_t i = 0; i < m; ++i) {
                      double acc = 0.0;
                      for (std::int64_t j = 0; j < n; ++j) {
                        const auto k = static_cast<std::size_t>(i * n + j);
                        acc += o->grad[k] * xi->value[k];
                      }
                      sg[static_cast<std::size_t>(i)] += acc;
                    }
                  }
                });
}

Tensor add_rows_where(const Tensor& base, const Tensor& upd, const SlotMask& valid) {
  require_rank2(base, "add_rows_where");
  const std::int64_t m = base.rows(), n = base.cols();
  require(upd.ndim() == 2 && upd.rows() == m && upd.cols() == n, "add_rows_where",
          "update shape " + shape_str(upd.shape()) + " != base shape " + shape_str(base.shape()));
  if (static_cast<std::int64_t>(valid.size()) != m) {
    throw ShapeError("add_rows_where: mask length != row count");
  }
  std::vector<double> out(static_cast<std::size_t>(m * n));
  const auto bv = base.values();
  const auto uv = upd.values();
  for (std::int64_t i = 0; i < m; ++i) {
    const bool on = valid[static_cast<std::size_t>(i)] != 0;
    for (std::int64_t j = 0; j < n; ++j) {
      const auto k = static_cast<std::size_t>(i * n + j);
      out[k] = on ? bv[k] + uv[k] : bv[k];
    }
  }
  const bool track = tracking(base) || tracking(upd);
  ImplPtr bi = base.impl();
  ImplPtr ui = upd.impl();
  const bool need_b = base.requires_grad();
  const bool need_u = upd.requires_grad();
  return finish("add_rows_where", {m, n}, std::move(out), track,
                [bi, ui, valid, m, n, need_b, need_u](const ImplPtr& o) {
                  if (need_b) {
                    auto& bg = bi->grad_buf();
                    for (std::size_t k = 0; k < bg.size(); ++k) bg[k] += o->grad[k];
                  }
                  if (need_u) {
                    auto& ug = ui->grad_buf();
                    for (std::int64_t i = 0; i < m; ++i) {
                      if (!valid[static_cast<std::size_t>(i)]) continue;
                      for (std::int64_t j = 0; j < n; ++j) {
                        const auto k = static_cast<std::size_t>(i * n + j);
                        ug[k] += o->grad[k];
                      }
                    }
                  }
                });
}

Tensor mask_cols(const Tensor& x, const SlotMask& valid, double fill) {
  require_rank2(x, "mask_cols");
  const std::int64_t m = x.rows(), n = x.cols();
  if (static_cast<std::int64_t>(valid.size()) != n) {
    throw ShapeError("mask_cols: mask length != column count");
  }
  std::vector<double> out(static_cast<std::size_t>(m * n));
  const auto xv = x.values();
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      const auto k = static_cast<std::size_t>(i * n + j);
      out[k] = valid[static_cast<std::size_t>(j)] ? xv[k] : fill;
    }
  ImplPtr xi = x.impl();
  return finish("mask_cols", {m, n}, std::move(out), tracking(x),
                [xi, valid, m, n](const ImplPtr& o) {
                  auto& xg = xi->grad_buf();
                  for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j) {
                      if (!valid[static_cast<std::size_t>(j)]) continue;
                      const auto k = static_cast<std::size_t>(i * n + j);
                      xg[k] += o->grad[k];
                    }
                });
}

Tensor scalar_affine(const Tensor& x, const Tensor& alpha, const Tensor& beta) {
  if (alpha.numel() != 1 || beta.numel() != 1) {
    throw ShapeError("scalar_affine: alpha and beta must be scalars");
  }
  const double a = alpha.values()[0];
  const double b = beta.values()[0];
  std::vector<double> out(x.numel());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * xv[i] + b;
  const bool track = tracking(x) || tracking(alpha) || tracking(beta);
  ImplPtr xi = x.impl();
  ImplPtr ai = alpha.impl();
  ImplPtr bi = beta.impl();
  const bool need_x = x.requires_grad();
  const bool need_a = alpha.requires_grad();
  const bool need_b = beta.requires_grad();
  return finish("scalar_affine", x.shape(), std::move(out), track,
                [xi, ai, bi, a, need_x, need_a, need_b](const ImplPtr& o) {
                  if (need_x) {
                    auto& xg = xi->grad_buf();
                    for (std::size_t i = 0; i < xg.size(); ++i) xg[i] += a * o->grad[i];
                  }
                  if (need_a) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < o->grad.size(); ++i)
                      acc += o->grad[i] * xi->value[i];
                    ai->grad_buf()[0] += acc;
                  }
                  if (need_b) {
                    double acc = 0.0;
                    for (const double g : o->grad) acc += g;
                    bi->grad_buf()[0] += acc;
                  }
                });
}

Tensor patchify(const Tensor& img, std::int64_t patch) {
  if (img.ndim() != 3) {
    throw ShapeError("patchify: expected [ch,H,W], got " + shape_str(img.shape()));
  }
  const std::int64_t ch = img.dim(0), h = img.dim(1), w = img.dim(2);
  if (patch <= 0 || h % patch != 0 || w % patch != 0) {
    throw ShapeError("patchify: image " + std::to_string(h) + "x" + std::to_string(w) +
                     " not divisible by patch " + std::to_string(patch));
  }
  const std::int64_t gh = h / patch, gw = w / patch;
  const std::int64_t np = gh * gw, fd = ch * patch * patch;
  std::vector<double> out(static_cast<std::size_t>(np * fd));
  const auto xv = img.values();
  for (std::int64_t gy = 0; gy < gh; ++gy)
    for (std::int64_t gx = 0; gx < gw; ++gx) {
      const std::int64_t p = gy * gw + gx;
      for (std::int64_t c = 0; c < ch; ++c)
        for (std::int64_t dy = 0; dy < patch; ++dy)
          for (std::int64_t dx = 0; dx < patch; ++dx) {
            const std::int64_t src = c * h * w + (gy * patch + dy) * w + (gx * patch + dx);
            const std::int64_t dst = p * fd + c * patch * patch + dy * patch + dx;
            out[static_cast<std::size_t>(dst)] = xv[static_cast<std::size_t>(src)];
          }
    }
  ImplPtr xi = img.impl();
  return finish("patchify", {np, fd}, std::move(out), tracking(img),
                [xi, ch, h, w, patch, gh, gw, fd](const ImplPtr& o) {
                  auto& xg = xi->grad_buf();
                  for (std::int64_t gy = 0; gy < gh; ++gy)
                    for (std::int64_t gx = 0; gx < gw; ++gx) {
                      const std::int64_t p = gy * gw + gx;
                      for (std::int64_t c = 0; c < ch; ++c)
                        for (std::int64_t dy = 0; dy < patch; ++dy)
                          for (std::int64_t dx = 0; dx < patch; ++dx) {
                            const std::int64_t src =
                                c * h * w + (gy * patch + dy) * w + (gx * patch + dx);
                            const std::int64_t dst = p * fd + c * patch * patch + dy * patch + dx;
                            xg[static_cast<std::size_t>(src)] += o->grad[static_cast<std::size_t>(dst)];
                          }
                    }
                });
}

}  // namespace ovd
