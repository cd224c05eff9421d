#include "tpm/tensor.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace tpm {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatRM>;
using MapCM = Eigen::Map<const MatRM>;

thread_local bool g_grad_enabled = true;

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

std::vector<std::int64_t> row_major_strides(const Shape& s) {
  std::vector<std::int64_t> st(s.size(), 1);
  for (int i = static_cast<int>(s.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * s[i + 1];
  return st;
}

// Right-aligned broadcast plan; stride 0 on broadcast dims.
struct BcastPlan {
  Shape out;
  std::vector<std::int64_t> sa, sb;
  std::int64_t n = 0;
};

BcastPlan make_bcast(const Shape& a, const Shape& b, const char* opname) {
  const int nd = static_cast<int>(std::max(a.size(), b.size()));
  BcastPlan p;
  p.out.resize(nd);
  for (int d = 0; d < nd; ++d) {
    const int da = d - (nd - static_cast<int>(a.size()));
    const int db = d - (nd - static_cast<int>(b.size()));
    const std::int64_t ea = da < 0 ? 1 : a[da];
    const std::int64_t eb = db < 0 ? 1 : b[db];
    if (ea != eb && ea != 1 && eb != 1)
      fail(std::string(opname) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
           " are not broadcastable");
    p.out[d] = std::max(ea, eb);
  }
  const auto sta = row_major_strides(a);
  const auto stb = row_major_strides(b);
  p.sa.assign(nd, 0);
  p.sb.assign(nd, 0);
  for (int d = 0; d < nd; ++d) {
    const int da = d - (nd - static_cast<int>(a.size()));
    const int db = d - (nd - static_cast<int>(b.size()));
    if (da >= 0 && a[da] != 1) p.sa[d] = sta[da];
    if (db >= 0 && b[db] != 1) p.sb[d] = stb[db];
  }
  p.n = shape_numel(p.out);
  return p;
}

// Walks every output element of a broadcast op, handing (out_i, a_off, b_off)
// to fn in row-major order.
template <typename F>
void bcast_for_each(const BcastPlan& p, F&& fn) {
  const int nd = static_cast<int>(p.out.size());
  std::vector<std::int64_t> idx(nd, 0);
  std::int64_t oa = 0, ob = 0;
  for (std::int64_t i = 0; i < p.n; ++i) {
    fn(i, oa, ob);
    for (int d = nd - 1; d >= 0; --d) {
      ++idx[d];
      oa += p.sa[d];
      ob += p.sb[d];
      if (idx[d] < p.out[d]) break;
      idx[d] = 0;
      oa -= p.sa[d] * p.out[d];
      ob -= p.sb[d] * p.out[d];
    }
  }
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

}  // namespace

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

void TensorImpl::ensure_grad() {
  if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
}

double* TensorImpl::grad_sink() {
  if (!requires_grad) return nullptr;
  ensure_grad();
  return grad.data();
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  auto impl = std::make_shared<TensorImpl>();
  const auto n = shape_numel(shape);
  check(n >= 0, "tensor extents must be non-negative");
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<std::size_t>(n), value);
  return Tensor(std::move(impl));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values) {
  check(shape_numel(shape) == static_cast<std::int64_t>(values.size()),
        "from_data: " + shape_str(shape) + " does not hold " +
            std::to_string(values.size()) + " values");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value) { return from_data({1}, {value}); }

double Tensor::item() const {
  check(numel() == 1, "item(): tensor " + shape_str(shape()) + " is not scalar");
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  return *this;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->data = impl_->data;
  return Tensor(std::move(impl));
}

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_op(Shape shape, std::vector<double> data, std::vector<Tensor> parents,
               std::function<void(TensorImpl&)> backprop) {
  check(shape_numel(shape) == static_cast<std::int64_t>(data.size()),
        "make_op: shape/data mismatch");
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (g_grad_enabled && needs) {
    impl->requires_grad = true;
    impl->parents.reserve(parents.size());
    for (const auto& p : parents) impl->parents.push_back(p.impl());
    impl->backprop = std::move(backprop);
  }
  return Tensor(std::move(impl));
}

void backward(const Tensor& loss) {
  check(loss.defined() && loss.numel() == 1,
        "backward: loss must be a scalar, got " +
            (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  check(loss.requires_grad(), "backward: loss is detached from the graph");

  // iterative post-order DFS -> topological order
  std::vector<TensorImpl*> topo;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl().get(), 0);
  seen.insert(loss.impl().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      TensorImpl* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      topo.push_back(node);
      stack.pop_back();
    }
  }

  loss.impl()->ensure_grad();
  loss.impl()->grad[0] = 1.0;
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    TensorImpl* node = *it;
    if (node->backprop) {
      node->ensure_grad();
      node->backprop(*node);
    }
  }
}

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

namespace {

enum class BinKind { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinKind kind, const char* name) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  const double* pa = a.data().data();
  const double* pb = b.data().data();

  if (same_shape(sa, sb)) {
    const std::int64_t n = a.numel();
    std::vector<double> out(static_cast<std::size_t>(n));
    switch (kind) {
      case BinKind::Add:
        for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i];
        break;
      case BinKind::Sub:
        for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i];
        break;
      case BinKind::Mul:
        for (std::int64_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i];
        break;
    }
    auto ai = a.impl();
    auto bi = b.impl();
    return make_op(sa, std::move(out), {a, b}, [ai, bi, kind, n](TensorImpl& o) {
      double* ga = ai->grad_sink();
      double* gb = bi->grad_sink();
      const double* go = o.grad.data();
      switch (kind) {
        case BinKind::Add:
          if (ga)
            for (std::int64_t i = 0; i < n; ++i) ga[i] += go[i];
          if (gb)
            for (std::int64_t i = 0; i < n; ++i) gb[i] += go[i];
          break;
        case BinKind::Sub:
          if (ga)
            for (std::int64_t i = 0; i < n; ++i) ga[i] += go[i];
          if (gb)
            for (std::int64_t i = 0; i < n; ++i) gb[i] -= go[i];
          break;
        case BinKind::Mul:
          if (ga)
            for (std::int64_t i = 0; i < n; ++i) ga[i] += go[i] * bi->data[i];
          if (gb)
            for (std::int64_t i = 0; i < n; ++i) gb[i] += go[i] * ai->data[i];
          break;
      }
    });
  }

  BcastPlan plan = make_bcast(sa, sb, name);
  std::vector<double> out(static_cast<std::size_t>(plan.n));
  bcast_for_each(plan, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
    switch (kind) {
      case BinKind::Add: out[i] = pa[oa] + pb[ob]; break;
      case BinKind::Sub: out[i] = pa[oa] - pb[ob]; break;
      case BinKind::Mul: out[i] = pa[oa] * pb[ob]; break;
    }
  });
  auto ai = a.impl();
  auto bi = b.impl();
  return make_op(plan.out, std::move(out), {a, b}, [ai, bi, kind, plan](TensorImpl& o) {
    double* ga = ai->grad_sink();
    double* gb = bi->grad_sink();
    const double* go = o.grad.data();
    const double* da = ai->data.data();
    const double* db = bi->data.data();
    bcast_for_each(plan, [&](std::int64_t i, std::int64_t oa, std::int64_t ob) {
      switch (kind) {
        case BinKind::Add:
          if (ga) ga[oa] += go[i];
          if (gb) gb[ob] += go[i];
          break;
        case BinKind::Sub:
          if (ga) ga[oa] += go[i];
          if (gb) gb[ob] -= go[i];
          break;
        case BinKind::Mul:
          if (ga) ga[oa] += go[i] * db[ob];
          if (gb) gb[ob] += go[i] * da[oa];
          break;
      }
    });
  });
}

// y = f(x) with dy/dx expressed from (x, y)
template <typename FwdF, typename BwdF>
Tensor unary_op(const Tensor& x, FwdF fwd, BwdF dfdx) {
  const std::int64_t n = x.numel();
  const double* px = x.data().data();
  std::vector<double> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) out[i] = fwd(px[i]);
  auto xi = x.impl();
  return make_op(x.shape(), std::move(out), {x}, [xi, n, dfdx](TensorImpl& o) {
    double* gx = xi->grad_sink();
    if (!gx) return;
    const double* go = o.grad.data();
    const double* dx = xi->data.data();
    const double* dy = o.data.data();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += go[i] * dfdx(dx[i], dy[i]);
  });
}

double sigmoid_val(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinKind::Mul, "mul"); }

Tensor scale(const Tensor& x, double s) {
  return unary_op(
      x, [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary_op(
      x, [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, [](double v) { return sigmoid_val(v); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor gelu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      x,
      [](double v) { return std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v))); },
      [](double v, double) { return sigmoid_val(v); });
}

Tensor exp_of(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor abs_of(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  check(sa.size() >= 2 && sb.size() >= 2,
        "matmul: operands must be at least 2-D, got " + shape_str(sa) + " x " + shape_str(sb));

  const std::int64_t m = sa[sa.size() - 2];
  const std::int64_t k = sa[sa.size() - 1];
  const std::int64_t kb = transpose_b ? sb[sb.size() - 1] : sb[sb.size() - 2];
  const std::int64_t n = transpose_b ? sb[sb.size() - 2] : sb[sb.size() - 1];
  check(k == kb, "matmul: inner extents differ, " + shape_str(sa) + " x " + shape_str(sb));

  Shape la(sa.begin(), sa.end() - 2), lb(sb.begin(), sb.end() - 2);
  check(la.empty() || lb.empty() || la == lb,
        "matmul: batch dims differ, " + shape_str(sa) + " x " + shape_str(sb));
  const Shape lead = la.empty() ? lb : la;
  const std::int64_t batch = shape_numel(lead);
  const bool batch_a = !la.empty();
  const bool batch_b = !lb.empty();

  Shape out_shape = lead;
  out_shape.push_back(m);
  out_shape.push_back(n);
  std::vector<double> out(static_cast<std::size_t>(batch * m * n));

  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::int64_t i = 0; i < batch; ++i) {
    MapCM A(pa + (batch_a ? i * m * k : 0), m, k);
    MapM C(out.data() + i * m * n, m, n);
    if (transpose_b) {
      MapCM B(pb + (batch_b ? i * n * k : 0), n, k);
      C.noalias() = A * B.transpose();
    } else {
      MapCM B(pb + (batch_b ? i * k * n : 0), k, n);
      C.noalias() = A * B;
    }
  }

  auto ai = a.impl();
  auto bi = b.impl();
  return make_op(
      std::move(out_shape), std::move(out), {a, b},
      [ai, bi, m, n, k, batch, batch_a, batch_b, transpose_b](TensorImpl& o) {
        double* ga = ai->grad_sink();
        double* gb = bi->grad_sink();
        const double* pa = ai->data.data();
        const double* pb = bi->data.data();
        for (std::int64_t i = 0; i < batch; ++i) {
          MapCM G(o.grad.data() + i * m * n, m, n);
          const double* a_blk = pa + (batch_a ? i * m * k : 0);
          const double* b_blk = pb + (batch_b ? i * k * n : 0);
          if (transpose_b) {
            MapCM B(b_blk, n, k);
            if (ga) {
              MapM GA(ga + (batch_a ? i * m * k : 0), m, k);
              GA.noalias() += G * B;
            }
            if (gb) {
              MapCM A(a_blk, m, k);
              MapM GB(gb + (batch_b ? i * n * k : 0), n, k);
              GB.noalias() += G.transpose() * A;
            }
          } else {
            MapCM B(b_blk, k, n);
            if (ga) {
              MapM GA(ga + (batch_a ? i * m * k : 0), m, k);
              GA.noalias() += G * B.transpose();
            }
            if (gb) {
              MapCM A(a_blk, m, k);
              MapM GB(gb + (batch_b ? i * k * n : 0), k, n);
              GB.noalias() += A.transpose() * G;
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

namespace {

struct ConvDims {
  std::int64_t B, Cin, H, W, Cout, Cg, kh, kw, Ho, Wo;
  int stride, pad, groups;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad, int groups) {
  const auto& sx = x.shape();
  const auto& sw = w.shape();
  check(sx.size() == 4 && sw.size() == 4,
        "conv2d: expected 4-D input and weight, got " + shape_str(sx) + " and " + shape_str(sw));
  check(stride >= 1 && pad >= 0 && groups >= 1, "conv2d: bad stride/padding/groups");
  ConvDims d{sx[0], sx[1], sx[2], sx[3], sw[0], sw[1], sw[2], sw[3], 0, 0, stride, pad, groups};
  check(d.Cin % groups == 0,
        "conv2d: input channels " + std::to_string(d.Cin) + " not divisible by groups " +
            std::to_string(groups));
  check(d.Cout % groups == 0, "conv2d: output channels not divisible by groups");
  check(d.Cg == d.Cin / groups,
        "conv2d: weight " + shape_str(sw) + " inconsistent with input " + shape_str(sx) +
            " at groups " + std::to_string(groups));
  d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
  d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;
  check(d.Ho > 0 && d.Wo > 0, "conv2d: kernel " + shape_str(sw) + " larger than padded input " +
                                  shape_str(sx));
  return d;
}

void im2col(const double* x, const ConvDims& d, std::int64_t b, std::int64_t g, double* col) {
  // col is [Cg*kh*kw, Ho*Wo], zero-filled by caller
  const std::int64_t n_cols = d.Ho * d.Wo;
  for (std::int64_t ci = 0; ci < d.Cg; ++ci) {
    const double* xc = x + ((b * d.Cin + g * d.Cg + ci) * d.H) * d.W;
    for (std::int64_t ky = 0; ky < d.kh; ++ky) {
      for (std::int64_t kx = 0; kx < d.kw; ++kx) {
        double* row = col + ((ci * d.kh + ky) * d.kw + kx) * n_cols;
        for (std::int64_t oy = 0; oy < d.Ho; ++oy) {
          const std::int64_t iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.H) continue;
          for (std::int64_t ox = 0; ox < d.Wo; ++ox) {
            const std::int64_t ix = ox * d.stride - d.pad + kx;
            if (ix < 0 || ix >= d.W) continue;
            row[oy * d.Wo + ox] = xc[iy * d.W + ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* col, const ConvDims& d, std::int64_t b, std::int64_t g,
                double* gx) {
  const std::int64_t n_cols = d.Ho * d.Wo;
  for (std::int64_t ci = 0; ci < d.Cg; ++ci) {
    double* xc = gx + ((b * d.Cin + g * d.Cg + ci) * d.H) * d.W;
    for (std::int64_t ky = 0; ky < d.kh; ++ky) {
      for (std::int64_t kx = 0; kx < d.kw; ++kx) {
        const double* row = col + ((ci * d.kh + ky) * d.kw + kx) * n_cols;
        for (std::int64_t oy = 0; oy < d.Ho; ++oy) {
          const std::int64_t iy = oy * d.stride - d.pad + ky;
          if (iy < 0 || iy >= d.H) continue;
          for (std::int64_t ox = 0; ox < d.Wo; ++ox) {
            const std::int64_t ix = ox * d.stride - d.pad + kx;
            if (ix < 0 || ix >= d.W) continue;
            xc[iy * d.W + ix] += row[oy * d.Wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int stride, int padding,
              int groups) {
  const ConvDims d = conv_dims(x, w, stride, padding, groups);
  if (bias.defined())
    check(bias.numel() == d.Cout, "conv2d: bias size " + shape_str(bias.shape()) +
                                      " does not match " + std::to_string(d.Cout) + " channels");

  const std::int64_t Cout_g = d.Cout / d.groups;
  const std::int64_t K = d.Cg * d.kh * d.kw;
  const std::int64_t N = d.Ho * d.Wo;
  std::vector<double> out(static_cast<std::size_t>(d.B * d.Cout * N), 0.0);

  const double* px = x.data().data();
  const double* pw = w.data().data();
  {
    std::vector<double> col(static_cast<std::size_t>(K * N));
    for (std::int64_t b = 0; b < d.B; ++b) {
      for (std::int64_t g = 0; g < d.groups; ++g) {
        std::fill(col.begin(), col.end(), 0.0);
        im2col(px, d, b, g, col.data());
        MapCM W(pw + g * Cout_g * K, Cout_g, K);
        MapCM C(col.data(), K, N);
        MapM Y(out.data() + (b * d.Cout + g * Cout_g) * N, Cout_g, N);
        Y.noalias() = W * C;
      }
    }
  }
  if (bias.defined()) {
    const double* pb = bias.data().data();
    for (std::int64_t b = 0; b < d.B; ++b)
      for (std::int64_t c = 0; c < d.Cout; ++c) {
        double* row = out.data() + (b * d.Cout + c) * N;
        for (std::int64_t i = 0; i < N; ++i) row[i] += pb[c];
      }
  }

  auto xi = x.impl();
  auto wi = w.impl();
  auto bi = bias.defined() ? bias.impl() : nullptr;
  std::vector<Tensor> parents = {x, w};
  if (bias.defined()) parents.push_back(bias);

  return make_op(
      {d.B, d.Cout, d.Ho, d.Wo}, std::move(out), std::move(parents),
      [xi, wi, bi, d, Cout_g, K, N](TensorImpl& o) {
        double* gx = xi->grad_sink();
        double* gw = wi->grad_sink();
        double* gb = bi ? bi->grad_sink() : nullptr;
        const double* go = o.grad.data();
        if (gb) {
          for (std::int64_t b = 0; b < d.B; ++b)
            for (std::int64_t c = 0; c < d.Cout; ++c) {
              const double* row = go + (b * d.Cout + c) * N;
              double s = 0.0;
              for (std::int64_t i = 0; i < N; ++i) s += row[i];
              gb[c] += s;
            }
        }
        if (!gx && !gw) return;
        std::vector<double> col(static_cast<std::size_t>(K * N));
        std::vector<double> dcol(static_cast<std::size_t>(K * N));
        const double* px = xi->data.data();
        const double* pw = wi->data.data();
        for (std::int64_t b = 0; b < d.B; ++b) {
          for (std::int64_t g = 0; g < d.groups; ++g) {
            MapCM G(go + (b * d.Cout + g * Cout_g) * N, Cout_g, N);
            if (gw) {
              std::fill(col.begin(), col.end(), 0.0);
              im2col(px, d, b, g, col.data());
              MapCM C(col.data(), K, N);
              MapM GW(gw + g * Cout_g * K, Cout_g, K);
              GW.noalias() += G * C.transpose();
            }
            if (gx) {
              MapCM W(pw + g * Cout_g * K, Cout_g, K);
              MapM DC(dcol.data(), K, N);
              DC.noalias() = W.transpose() * G;
              col2im_add(dcol.data(), d, b, g, gx);
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// layer_norm / softmax
// ---------------------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const auto& sx = x.shape();
  check(!sx.empty(), "layer_norm: scalar input");
  const std::int64_t C = sx.back();
  check(gamma.numel() == C && beta.numel() == C,
        "layer_norm: gamma/beta must have " + std::to_string(C) + " entries");
  check(eps > 0.0, "layer_norm: eps must be positive");
  const std::int64_t R = x.numel() / C;

  std::vector<double> out(static_cast<std::size_t>(R * C));
  std::vector<double> means(static_cast<std::size_t>(R)), invstds(static_cast<std::size_t>(R));
  const double* px = x.data().data();
  const double* pg = gamma.data().data();
  const double* pb = beta.data().data();
  for (std::int64_t r = 0; r < R; ++r) {
    const double* row = px + r * C;
    double mean = 0.0;
    for (std::int64_t i = 0; i < C; ++i) mean += row[i];
    mean /= static_cast<double>(C);
    double var = 0.0;
    for (std::int64_t i = 0; i < C; ++i) {
      const double dv = row[i] - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(C);
    const double invstd = 1.0 / std::sqrt(var + eps);
    means[r] = mean;
    invstds[r] = invstd;
    double* orow = out.data() + r * C;
    for (std::int64_t i = 0; i < C; ++i) orow[i] = (row[i] - mean) * invstd * pg[i] + pb[i];
  }

  auto xi = x.impl();
  auto gi = gamma.impl();
  auto bi = beta.impl();
  return make_op(sx, std::move(out), {x, gamma, beta},
                 [xi, gi, bi, R, C, means = std::move(means),
                  invstds = std::move(invstds)](TensorImpl& o) {
                   double* gx = xi->grad_sink();
                   double* gg = gi->grad_sink();
                   double* gb = bi->grad_sink();
                   const double* go = o.grad.data();
                   const double* px = xi->data.data();
                   const double* pg = gi->data.data();
                   for (std::int64_t r = 0; r < R; ++r) {
                     const double* row = px + r * C;
                     const double* grow = go + r * C;
                     const double mean = means[r];
                     const double invstd = invstds[r];
                     if (gg || gb) {
                       for (std::int64_t i = 0; i < C; ++i) {
                         const double xhat = (row[i] - mean) * invstd;
                         if (gg) gg[i] += grow[i] * xhat;
                         if (gb) gb[i] += grow[i];
                       }
                     }
                     if (gx) {
                       double m1 = 0.0, m2 = 0.0;
                       for (std::int64_t i = 0; i < C; ++i) {
                         const double xhat = (row[i] - mean) * invstd;
                         const double dxhat = grow[i] * pg[i];
                         m1 += dxhat;
                         m2 += dxhat * xhat;
                       }
                       m1 /= static_cast<double>(C);
                       m2 /= static_cast<double>(C);
                       double* gxr = gx + r * C;
                       for (std::int64_t i = 0; i < C; ++i) {
                         const double xhat = (row[i] - mean) * invstd;
                         const double dxhat = grow[i] * pg[i];
                         gxr[i] += invstd * (dxhat - m1 - xhat * m2);
                       }
                     }
                   }
                 });
}

Tensor softmax_lastdim(const Tensor& x) {
  const auto& sx = x.shape();
  const std::int64_t C = sx.back();
  const std::int64_t R = x.numel() / C;
  std::vector<double> out(static_cast<std::size_t>(R * C));
  const double* px = x.data().data();
  for (std::int64_t r = 0; r < R; ++r) {
    const double* row = px + r * C;
    double mx = row[0];
    for (std::int64_t i = 1; i < C; ++i) mx = std::max(mx, row[i]);
    double s = 0.0;
    double* orow = out.data() + r * C;
    for (std::int64_t i = 0; i < C; ++i) {
      orow[i] = std::exp(row[i] - mx);
      s += orow[i];
    }
    const double inv = 1.0 / s;
    for (std::int64_t i = 0; i < C; ++i) orow[i] *= inv;
  }
  auto xi = x.impl();
  return make_op(sx, std::move(out), {x}, [xi, R, C](TensorImpl& o) {
    double* gx = xi->grad_sink();
    if (!gx) return;
    const double* go = o.grad.data();
    const double* y = o.data.data();
    for (std::int64_t r = 0; r < R; ++r) {
      const double* yr = y + r * C;
      const double* gr = go + r * C;
      double dot = 0.0;
      for (std::int64_t i = 0; i < C; ++i) dot += gr[i] * yr[i];
      double* gxr = gx + r * C;
      for (std::int64_t i = 0; i < C; ++i) gxr[i] += yr[i] * (gr[i] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  check(shape_numel(shape) == x.numel(), "reshape: " + shape_str(x.shape()) +
                                             " cannot be viewed as " + shape_str(shape));
  auto xi = x.impl();
  const std::int64_t n = x.numel();
  return make_op(std::move(shape), x.data(), {x}, [xi, n](TensorImpl& o) {
    double* gx = xi->grad_sink();
    if (!gx) return;
    const double* go = o.grad.data();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += go[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const auto& sx = x.shape();
  check(perm.size() == sx.size(), "permute: order has wrong rank");
  const int nd = static_cast<int>(sx.size());
  Shape out_shape(nd);
  const auto in_strides = row_major_strides(sx);
  std::vector<std::int64_t> map_strides(nd);
  std::vector<bool> used(nd, false);
  for (int i = 0; i < nd; ++i) {
    check(perm[i] >= 0 && perm[i] < nd && !used[perm[i]], "permute: invalid order");
    used[perm[i]] = true;
    out_shape[i] = sx[perm[i]];
    map_strides[i] = in_strides[perm[i]];
  }
  const std::int64_t n = x.numel();
  std::vector<double> out(static_cast<std::size_t>(n));
  const double* px = x.data().data();
  {
    std::vector<std::int64_t> idx(nd, 0);
    std::int64_t off = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      out[i] = px[off];
      for (int d = nd - 1; d >= 0; --d) {
        ++idx[d];
        off += map_strides[d];
        if (idx[d] < out_shape[d]) break;
        idx[d] = 0;
        off -= map_strides[d] * out_shape[d];
      }
    }
  }
  auto xi = x.impl();
  return make_op(out_shape, std::move(out), {x},
                 [xi, out_shape, map_strides, n, nd](TensorImpl& o) {
                   double* gx = xi->grad_sink();
                   if (!gx) return;
                   const double* go = o.grad.data();
                   std::vector<std::int64_t> idx(nd, 0);
                   std::int64_t off = 0;
                   for (std::int64_t i = 0; i < n; ++i) {
                     gx[off] += go[i];
                     for (int d = nd - 1; d >= 0; --d) {
                       ++idx[d];
                       off += map_strides[d];
                       if (idx[d] < out_shape[d]) break;
                       idx[d] = 0;
                       off -= map_strides[d] * out_shape[d];
                     }
                   }
                 });
}

std::vector<Tensor> split(const Tensor& x, int axis, int parts) {
  const auto& sx = x.shape();
  check(axis >= 0 && axis < static_cast<int>(sx.size()), "split: axis out of range");
  check(parts >= 1 && sx[axis] % parts == 0,
        "split: extent " + std::to_string(sx[axis]) + " not divisible by " +
            std::to_string(parts));
  const std::int64_t step = sx[axis] / parts;
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= sx[i];
  for (std::size_t i = axis + 1; i < sx.size(); ++i) inner *= sx[i];

  Shape part_shape = sx;
  part_shape[axis] = step;
  const std::int64_t chunk = step * inner;
  const std::int64_t stride = sx[axis] * inner;
  const double* px = x.data().data();
  auto xi = x.impl();

  std::vector<Tensor> outs;
  outs.reserve(parts);
  for (int p = 0; p < parts; ++p) {
    std::vector<double> data(static_cast<std::size_t>(outer * chunk));
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(data.data() + o * chunk, px + o * stride + p * chunk,
                  sizeof(double) * chunk);
    outs.push_back(make_op(part_shape, std::move(data), {x},
                           [xi, p, outer, chunk, stride](TensorImpl& o) {
                             double* gx = xi->grad_sink();
                             if (!gx) return;
                             const double* go = o.grad.data();
                             for (std::int64_t ou = 0; ou < outer; ++ou) {
                               double* dst = gx + ou * stride + p * chunk;
                               const double* src = go + ou * chunk;
                               for (std::int64_t i = 0; i < chunk; ++i) dst[i] += src[i];
                             }
                           }));
  }
  return outs;
}

Tensor concat(const std::vector<Tensor>& xs, int axis) {
  check(!xs.empty(), "concat: empty list");
  const auto& s0 = xs[0].shape();
  check(axis >= 0 && axis < static_cast<int>(s0.size()), "concat: axis out of range");
  std::int64_t total = 0;
  for (const auto& t : xs) {
    const auto& s = t.shape();
    check(s.size() == s0.size(), "concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
      check(static_cast<int>(i) == axis || s[i] == s0[i],
            "concat: shape mismatch " + shape_str(s) + " vs " + shape_str(s0));
    total += s[axis];
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= s0[i];
  for (std::size_t i = axis + 1; i < s0.size(); ++i) inner *= s0[i];

  Shape out_shape = s0;
  out_shape[axis] = total;
  std::vector<double> out(static_cast<std::size_t>(outer * total * inner));
  const std::int64_t out_stride = total * inner;
  std::int64_t at = 0;
  struct Piece {
    TensorImplPtr impl;
    std::int64_t offset, chunk;
  };
  std::vector<Piece> pieces;
  std::vector<Tensor> parents;
  for (const auto& t : xs) {
    const std::int64_t chunk = t.shape()[axis] * inner;
    const double* p = t.data().data();
    for (std::int64_t o = 0; o < outer; ++o)
      std::memcpy(out.data() + o * out_stride + at, p + o * chunk, sizeof(double) * chunk);
    pieces.push_back({t.impl(), at, chunk});
    parents.push_back(t);
    at += chunk;
  }
  return make_op(std::move(out_shape), std::move(out), std::move(parents),
                 [pieces = std::move(pieces), outer, out_stride](TensorImpl& o) {
                   const double* go = o.grad.data();
                   for (const auto& pc : pieces) {
                     double* g = pc.impl->grad_sink();
                     if (!g) continue;
                     for (std::int64_t ou = 0; ou < outer; ++ou) {
                       const double* src = go + ou * out_stride + pc.offset;
                       double* dst = g + ou * pc.chunk;
                       for (std::int64_t i = 0; i < pc.chunk; ++i) dst[i] += src[i];
                     }
                   }
                 });
}

Tensor take_rows(const Tensor& table, const std::vector<std::int32_t>& idx) {
  const auto& st = table.shape();
  check(st.size() == 2, "take_rows: table must be 2-D");
  const std::int64_t R = st[0], C = st[1];
  const std::int64_t M = static_cast<std::int64_t>(idx.size());
  std::vector<double> out(static_cast<std::size_t>(M * C));
  const double* pt = table.data().data();
  for (std::int64_t i = 0; i < M; ++i) {
    const std::int32_t r = idx[i];
    check(r >= 0 && r < R, "take_rows: index out of range");
    std::memcpy(out.data() + i * C, pt + static_cast<std::int64_t>(r) * C, sizeof(double) * C);
  }
  auto ti = table.impl();
  return make_op({M, C}, std::move(out), {table}, [ti, idx, M, C](TensorImpl& o) {
    double* g = ti->grad_sink();
    if (!g) return;
    const double* go = o.grad.data();
    for (std::int64_t i = 0; i < M; ++i) {
      double* dst = g + static_cast<std::int64_t>(idx[i]) * C;
      const double* src = go + i * C;
      for (std::int64_t c = 0; c < C; ++c) dst[c] += src[c];
    }
  });
}

// ---------------------------------------------------------------------------
// spatial ops (NCHW)
// ---------------------------------------------------------------------------

namespace {
void expect_4d(const Tensor& x, const char* op) {
  check(x.shape().size() == 4, std::string(op) + ": expected 4-D NCHW, got " +
                                   shape_str(x.shape()));
}
}  // namespace

Tensor avg_pool2(const Tensor& x) {
  expect_4d(x, "avg_pool2");
  const auto& s = x.shape();
  const std::int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  check(H % 2 == 0 && W % 2 == 0,
        "avg_pool2: odd extents in " + shape_str(s) + " cannot be pooled 2x2");
  const std::int64_t Ho = H / 2, Wo = W / 2;
  std::vector<double> out(static_cast<std::size_t>(B * C * Ho * Wo));
  const double* px = x.data().data();
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* in = px + bc * H * W;
    double* op = out.data() + bc * Ho * Wo;
    for (std::int64_t y = 0; y < Ho; ++y)
      for (std::int64_t xo = 0; xo < Wo; ++xo) {
        const double* r0 = in + (2 * y) * W + 2 * xo;
        const double* r1 = r0 + W;
        // pairwise sum keeps pooling of a constant image exact
        op[y * Wo + xo] = ((r0[0] + r0[1]) + (r1[0] + r1[1])) * 0.25;
      }
  }
  auto xi = x.impl();
  return make_op({B, C, Ho, Wo}, std::move(out), {x}, [xi, B, C, H, W, Ho, Wo](TensorImpl& o) {
    double* gx = xi->grad_sink();
    if (!gx) return;
    const double* go = o.grad.data();
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
      double* gin = gx + bc * H * W;
      const double* gout = go + bc * Ho * Wo;
      for (std::int64_t y = 0; y < Ho; ++y)
        for (std::int64_t xo = 0; xo < Wo; ++xo) {
          const double g = gout[y * Wo + xo] * 0.25;
          double* r0 = gin + (2 * y) * W + 2 * xo;
          double* r1 = r0 + W;
          r0[0] += g;
          r0[1] += g;
          r1[0] += g;
          r1[1] += g;
        }
    }
  });
}

namespace {
// half-pixel source coordinate for 2x upsampling, clamped at the borders
inline void up2_coord(std::int64_t o, std::int64_t extent, std::int64_t& i0, std::int64_t& i1,
                      double& f) {
  double s = 0.5 * static_cast<double>(o) - 0.25;
  if (s < 0.0) s = 0.0;
  i0 = static_cast<std::int64_t>(s);
  i1 = std::min(i0 + 1, extent - 1);
  f = s - static_cast<double>(i0);
}
}  // namespace

Tensor bilinear_up2(const Tensor& x) {
  expect_4d(x, "bilinear_up2");
  const auto& s = x.shape();
  const std::int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  const std::int64_t Ho = 2 * H, Wo = 2 * W;
  std::vector<double> out(static_cast<std::size_t>(B * C * Ho * Wo));
  const double* px = x.data().data();
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* in = px + bc * H * W;
    double* op = out.data() + bc * Ho * Wo;
    for (std::int64_t oy = 0; oy < Ho; ++oy) {
      std::int64_t y0, y1;
      double fy;
      up2_coord(oy, H, y0, y1, fy);
      for (std::int64_t ox = 0; ox < Wo; ++ox) {
        std::int64_t x0, x1;
        double fx;
        up2_coord(ox, W, x0, x1, fx);
        const double v00 = in[y0 * W + x0], v01 = in[y0 * W + x1];
        const double v10 = in[y1 * W + x0], v11 = in[y1 * W + x1];
        // lerp form: exact for constant inputs
        const double a = v00 + fx * (v01 - v00);
        const double b = v10 + fx * (v11 - v10);
        op[oy * Wo + ox] = a + fy * (b - a);
      }
    }
  }
  auto xi = x.impl();
  return make_op({B, C, Ho, Wo}, std::move(out), {x}, [xi, B, C, H, W, Ho, Wo](TensorImpl& o) {
    double* gx = xi->grad_sink();
    if (!gx) return;
    const double* go = o.grad.data();
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
      double* gin = gx + bc * H * W;
      const double* gout = go + bc * Ho * Wo;
      for (std::int64_t oy = 0; oy < Ho; ++oy) {
        std::int64_t y0, y1;
        double fy;
        up2_coord(oy, H, y0, y1, fy);
        for (std::int64_t ox = 0; ox < Wo; ++ox) {
          std::int64_t x0, x1;
          double fx;
          up2_coord(ox, W, x0, x1, fx);
          const double g = gout[oy * Wo + ox];
          gin[y0 * W + x0] += g * (1.0 - fy) * (1.0 - fx);
          gin[y0 * W + x1] += g * (1.0 - fy) * fx;
          gin[y1 * W + x0] += g * fy * (1.0 - fx);
          gin[y1 * W + x1] += g * fy * fx;
        }
      }
    }
  });
}

Tensor pixel_shuffle(const Tensor& x, int r) {
  expect_4d(x, "pixel_shuffle");
  const auto& s = x.shape();
  const std::int64_t B = s[0], Cin = s[1], H = s[2], W = s[3];
  check(r >= 1 && Cin % (static_cast<std::int64_t>(r) * r) == 0,
        "pixel_shuffle: channels " + std::to_string(Cin) + " not divisible by r^2 with r = " +
            std::to_string(r));
  const std::int64_t C = Cin / (static_cast<std::int64_t>(r) * r);
  const std::int64_t Ho = H * r, Wo = W * r;
  std::vector<double> out(static_cast<std::size_t>(B * C * Ho * Wo));
  const double* px = x.data().data();
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t dy = 0; dy < r; ++dy)
        for (std::int64_t dx = 0; dx < r; ++dx) {
          const double* in = px + (((b * Cin) + (c * r + dy) * r + dx) * H) * W;
          for (std::int64_t y = 0; y < H; ++y) {
            double* op = out.data() + ((b * C + c) * Ho + (y * r + dy)) * Wo + dx;
            const double* ip = in + y * W;
            for (std::int64_t xw = 0; xw < W; ++xw) op[xw * r] = ip[xw];
          }
        }
  auto xi = x.impl();
  return make_op({B, C, Ho, Wo}, std::move(out), {x},
                 [xi, B, C, Cin, H, W, Ho, Wo, r](TensorImpl& o) {
                   double* gx = xi->grad_sink();
                   if (!gx) return;
                   const double* go = o.grad.data();
                   for (std::int64_t b = 0; b < B; ++b)
                     for (std::int64_t c = 0; c < C; ++c)
                       for (std::int64_t dy = 0; dy < r; ++dy)
                         for (std::int64_t dx = 0; dx < r; ++dx) {
                           double* gin = gx + (((b * Cin) + (c * r + dy) * r + dx) * H) * W;
                           for (std::int64_t y = 0; y < H; ++y) {
                             const double* op =
                                 go + ((b * C + c) * Ho + (y * r + dy)) * Wo + dx;
                             double* ip = gin + y * W;
                             for (std::int64_t xw = 0; xw < W; ++xw) ip[xw] += op[xw * r];
                           }
                         }
                 });
}

namespace {
// reflect-101 fold of an out-of-range index; repeated reflection supports
// pads larger than the extent
inline std::int64_t reflect_fold(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}
}  // namespace

Tensor pad_reflect(const Tensor& x, int top, int bottom, int left, int right) {
  expect_4d(x, "pad_reflect");
  check(top >= 0 && bottom >= 0 && left >= 0 && right >= 0, "pad_reflect: negative pad");
  const auto& s = x.shape();
  const std::int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  const std::int64_t Ho = H + top + bottom, Wo = W + left + right;
  std::vector<std::int64_t> ymap(static_cast<std::size_t>(Ho)), xmap(static_cast<std::size_t>(Wo));
  for (std::int64_t y = 0; y < Ho; ++y) ymap[y] = reflect_fold(y - top, H);
  for (std::int64_t xx = 0; xx < Wo; ++xx) xmap[xx] = reflect_fold(xx - left, W);

  std::vector<double> out(static_cast<std::size_t>(B * C * Ho * Wo));
  const double* px = x.data().data();
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    const double* in = px + bc * H * W;
    double* op = out.data() + bc * Ho * Wo;
    for (std::int64_t y = 0; y < Ho; ++y)
      for (std::int64_t xx = 0; xx < Wo; ++xx) op[y * Wo + xx] = in[ymap[y] * W + xmap[xx]];
  }
  auto xi = x.impl();
  return make_op({B, C, Ho, Wo}, std::move(out), {x},
                 [xi, B, C, H, W, Ho, Wo, ymap = std::move(ymap),
                  xmap = std::move(xmap)](TensorImpl& o) {
                   double* gx = xi->grad_sink();
                   if (!gx) return;
                   const double* go = o.grad.data();
                   for (std::int64_t bc = 0; bc < B * C; ++bc) {
                     double* gin = gx + bc * H * W;
                     const double* gout = go + bc * Ho * Wo;
                     for (std::int64_t y = 0; y < Ho; ++y)
                       for (std::int64_t xx = 0; xx < Wo; ++xx)
                         gin[ymap[y] * W + xmap[xx]] += gout[y * Wo + xx];
                   }
                 });
}

Tensor crop(const Tensor& x, int top, int left, int out_h, int out_w) {
  expect_4d(x, "crop");
  const auto& s = x.shape();
  const std::int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  check(top >= 0 && left >= 0 && out_h >= 1 && out_w >= 1 && top + out_h <= H &&
            left + out_w <= W,
        "crop: region exceeds " + shape_str(s));
  std::vector<double> out(static_cast<std::size_t>(B * C * out_h * out_w));
  const double* px = x.data().data();
  for (std::int64_t bc = 0; bc < B * C; ++bc)
    for (std::int64_t y = 0; y < out_h; ++y)
      std::memcpy(out.data() + (bc * out_h + y) * out_w,
                  px + (bc * H + top + y) * W + left, sizeof(double) * out_w);
  auto xi = x.impl();
  return make_op({B, C, out_h, out_w}, std::move(out), {x},
                 [xi, B, C, H, W, top, left, out_h, out_w](TensorImpl& o) {
                   double* gx = xi->grad_sink();
                   if (!gx) return;
                   const double* go = o.grad.data();
                   for (std::int64_t bc = 0; bc < B * C; ++bc)
                     for (std::int64_t y = 0; y < out_h; ++y) {
                       double* dst = gx + (bc * H + top + y) * W + left;
                       const double* src = go + (bc * out_h + y) * out_w;
                       for (std::int64_t xx = 0; xx < out_w; ++xx) dst[xx] += src[xx];
                     }
                 });
}

Tensor mean_hw(const Tensor& x) {
  expect_4d(x, "mean_hw");
  const auto& s = x.shape();
  const std::int64_t B = s[0], C = s[1], HW = s[2] * s[3];
  std::vector<double> out(static_cast<std::size_t>(B * C));
  const double* px = x.data().data();
  for (std::int64_t bc = 0; bc < B * C; ++bc) {
    double acc = 0.0;
    const double* in = px + bc * HW;
    for (std::int64_t i = 0; i < HW; ++i) acc += in[i];
    out[bc] = acc / static_cast<double>(HW);
  }
  auto xi = x.impl();
  return make_op({B, C, 1, 1}, std::move(out), {x}, [xi, B, C, HW](TensorImpl& o) {
    double* gx = xi->grad_sink();
    if (!gx) return;
    const double* go = o.grad.data();
    const double inv = 1.0 / static_cast<double>(HW);
    for (std::int64_t bc = 0; bc < B * C; ++bc) {
      const double g = go[bc] * inv;
      double* gin = gx + bc * HW;
      for (std::int64_t i = 0; i < HW; ++i) gin[i] += g;
    }
  });
}

Tensor sum_all(const Tensor& x) {
  const std::int64_t n = x.numel();
  const double* px = x.data().data();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += px[i];
  auto xi = x.impl();
  return make_op({1}, {acc}, {x}, [xi, n](TensorImpl& o) {
    double* gx = xi->grad_sink();
    if (!gx) return;
    const double g = o.grad[0];
    for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
  });
}

Tensor mean_all(const Tensor& x) {
  const std::int64_t n = x.numel();
  const double* px = x.data().data();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += px[i];
  acc /= static_cast<double>(n);
  auto xi = x.impl();
  return make_op({1}, {acc}, {x}, [xi, n](TensorImpl& o) {
    double* gx = xi->grad_sink();
    if (!gx) return;
    const double g = o.grad[0] / static_cast<double>(n);
    for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
  });
}

}  // namespace tpm
