#pragma once

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace ovd {

using Shape = std::vector<std::int64_t>;
using SlotMask = std::vector<std::uint8_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;

  std::vector<double>& grad_buf() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

// Dense row-major tensor of 64-bit floats. Copies are shallow handles to the
// same storage; operations never mutate input values, so handles behave as
// values in forward code. Gradients accumulate additively into `grad`.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(Shape shape, std::vector<double> data);
  static Tensor scalar(double v);               // shape [1,1]
  static Tensor row(std::vector<double> data);  // shape [1,n]
  static Tensor column(std::vector<double> data);  // shape [n,1]
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::int64_t ndim() const;
  std::int64_t dim(std::int64_t i) const;
  std::int64_t numel() const;
  std::int64_t rows() const;  // rank-2 only
  std::int64_t cols() const;  // rank-2 only

  double item() const;  // numel == 1
  double at(std::int64_t r, std::int64_t c) const;
  std::span<const double> values() const;
  std::vector<double>& mutable_values();  // parameter updates only

  bool requires_grad() const;
  Tensor& set_requires_grad(bool b);
  // Gradient read access; zero tensor semantics when never touched.
  double grad_at(std::int64_t r, std::int64_t c) const;
  std::vector<double> grad_vector() const;
  void zero_grad();

  // Same values, detached from gradient flow (shares no graph history).
  Tensor detach() const;
  Tensor clone() const;

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend Tensor make_tensor(Shape, std::vector<double>, bool);
};

Tensor make_tensor(Shape shape, std::vector<double> data, bool requires_grad);

// Per-forward-pass record of executed operations. Constructing a Tape makes
// it the active tape for the current thread (stack discipline); operations
// record backward closures onto it whenever an input participates in
// gradient flow. `backward` walks the record once in reverse and clears it.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active();
  void record(std::function<void()> fn);
  std::size_t size() const { return entries_.size(); }
  void run_backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> entries_;
  Tape* prev_ = nullptr;
};

// Seeds d(loss)/d(loss) = 1 on the active tape and back-propagates to every
// requires_grad leaf. The tape record is discarded afterwards.
void backward(const Tensor& loss);

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor minimum(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& x, double c);
Tensor mul_scalar(const Tensor& x, double c);
Tensor pow_scalar(const Tensor& x, double p);
Tensor neg(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor sqrt(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor silu(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor inverse_sigmoid(const Tensor& x, double eps = 1e-6);

// ---- linear algebra / structure ----
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);
// Row-wise softmax over valid columns; masked columns are exactly zero in the
// output and receive exactly zero gradient. Stabilized by row-max subtraction.
Tensor softmax_rows(const Tensor& x, const SlotMask* valid = nullptr);
// Row maximum over valid columns, shape [m,1]. Gradient flows to the first
// attaining entry of each row.
Tensor rowmax(const Tensor& x, const SlotMask* valid = nullptr);
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);
Tensor layer_norm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias,
                       double eps = 1e-5);
Tensor sum(const Tensor& x);       // [1,1]
Tensor sum_rows(const Tensor& x);  // [m,1]
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& x, std::int64_t first, std::int64_t count);
Tensor gather_rows(const Tensor& x, std::vector<std::int64_t> idx);
Tensor add_rowvec(const Tensor& x, const Tensor& v);  // v: [1,n]
Tensor scale_rows(const Tensor& x, const Tensor& s);  // s: [m,1]
// out[i] = valid[i] ? base[i] + upd[i] : base[i]; skipped rows are copied
// bitwise from base.
Tensor add_rows_where(const Tensor& base, const Tensor& upd, const SlotMask& valid);
// out[i][j] = valid[j] ? x[i][j] : fill; gradient flows through valid columns only.
Tensor mask_cols(const Tensor& x, const SlotMask& valid, double fill);
// out = alpha * x + beta with scalar tensors alpha, beta ([1,1]).
Tensor scalar_affine(const Tensor& x, const Tensor& alpha, const Tensor& beta);
// [ch,H,W] -> [(H/p)*(W/p), ch*p*p]; non-overlapping patches in row-major
// grid order, channel-major within a patch.
Tensor patchify(const Tensor& img, std::int64_t patch);

}  // namespace ovd
