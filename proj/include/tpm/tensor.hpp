#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace tpm {

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl;
using TensorImplPtr = std::shared_ptr<TensorImpl>;

// Dense 64-bit tensor node. Data is row-major. `parents` + `backprop`
// form the reverse-mode graph; leaves have no backprop. grad is
// allocated lazily and only ever written for requires_grad impls.
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<TensorImplPtr> parents;
  std::function<void(TensorImpl&)> backprop;

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  void ensure_grad();
  // returns nullptr when this impl does not accumulate gradient
  double* grad_sink();
};

// Value-semantic handle onto a shared TensorImpl.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(TensorImplPtr impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim(std::size_t i) const { return impl_->shape[i]; }
  std::size_t ndim() const { return impl_->shape.size(); }
  std::int64_t numel() const { return impl_->numel(); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  double item() const;

  Tensor& set_requires_grad(bool v);
  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  const std::vector<double>& grad() const { return impl_->grad; }
  void zero_grad();

  // copy of the data with no graph attached; never receives gradient
  Tensor detach() const;

  const TensorImplPtr& impl() const { return impl_; }

 private:
  TensorImplPtr impl_;
};

// Scoped switch that stops ops from recording graph nodes (inference mode).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool saved_;
};

bool grad_enabled();

// Extension point: wraps raw output data + a backward rule into a graph
// node. The rule reads out.grad and accumulates into parents' grad_sink().
Tensor make_op(Shape shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(TensorImpl&)> backprop);

// Reverse-mode sweep from a scalar loss. Visits each reachable node once
// in reverse topological order; fan-out accumulates by summation.
void backward(const Tensor& loss);

// ---- elementwise (right-aligned broadcasting on add/sub/mul) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
Tensor add_scalar(const Tensor& x, double s);
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor exp_of(const Tensor& x);
Tensor relu(const Tensor& x);
Tensor abs_of(const Tensor& x);

// ---- linear algebra ----
// a: [*, m, k], b: [*, k, n] (or [*, n, k] with transpose_b). Batch dims
// must match elementwise, or one operand may omit them entirely.
Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b = false);

// Cross-correlation conv. x: [B, Cin, H, W], w: [Cout, Cin/g, kh, kw],
// bias: [Cout] or undefined. Zero padding, Cin and Cout divisible by g.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int stride, int padding, int groups);

// Normalizes the last axis. gamma/beta: [C]; eps > 0 guards zero variance.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);

Tensor softmax_lastdim(const Tensor& x);

// ---- shape ----
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
std::vector<Tensor> split(const Tensor& x, int axis, int parts);
Tensor concat(const std::vector<Tensor>& xs, int axis);
// rows of a [R, C] table gathered into [len(idx), C]
Tensor take_rows(const Tensor& table, const std::vector<std::int32_t>& idx);

// ---- spatial (NCHW) ----
Tensor avg_pool2(const Tensor& x);     // 2x2 mean, halves H and W (even only)
Tensor bilinear_up2(const Tensor& x);  // x2, half-pixel centers
Tensor pixel_shuffle(const Tensor& x, int r);
Tensor pad_reflect(const Tensor& x, int top, int bottom, int left, int right);
Tensor crop(const Tensor& x, int top, int left, int out_h, int out_w);
Tensor mean_hw(const Tensor& x);       // [B,C,H,W] -> [B,C,1,1]

// ---- reductions ----
Tensor sum_all(const Tensor& x);
Tensor mean_all(const Tensor& x);

}  // namespace tpm
