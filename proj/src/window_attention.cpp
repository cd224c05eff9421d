#include "tpm/window_attention.hpp"

#include <cmath>
#include <stdexcept>

#include "tpm/scan_layout.hpp"

namespace tpm {

WindowAttention::WindowAttention(std::int64_t dim_, std::int64_t heads_, std::int64_t window_,
                                 Rng& rng)
    : dim(dim_), heads(heads_), window(window_) {
  if (dim % heads != 0)
    throw std::invalid_argument("window attention: dim " + std::to_string(dim) +
                                " not divisible by heads " + std::to_string(heads));
  qkv = Linear(dim, 3 * dim, rng);
  proj = Linear(dim, dim, rng, /*bias=*/true, /*weight_gain=*/0.1);
  const std::int64_t span = 2 * window - 1;
  rel_bias = Tensor::zeros({span * span, heads});
  init_trunc_normal(rel_bias, rng, 0.02);
  rel_bias.set_requires_grad(true);

  const std::int64_t T = window * window;
  rel_index.resize(static_cast<std::size_t>(T * T));
  for (std::int64_t i = 0; i < T; ++i) {
    const std::int64_t yi = i / window, xi = i % window;
    for (std::int64_t j = 0; j < T; ++j) {
      const std::int64_t yj = j / window, xj = j % window;
      rel_index[i * T + j] =
          static_cast<std::int32_t>((yi - yj + window - 1) * span + (xi - xj + window - 1));
    }
  }
}

Tensor WindowAttention::forward_windows(const Tensor& x_windows) const {
  const auto& s = x_windows.shape();
  if (s.size() != 3 || s[2] != dim)
    throw std::invalid_argument("window attention: expected [G, T, " + std::to_string(dim) +
                                "], got " + shape_str(s));
  const std::int64_t G = s[0], T = s[1];
  const std::int64_t dh = dim / heads;

  Tensor qkv_out = qkv(x_windows);                                  // [G, T, 3C]
  qkv_out = reshape(qkv_out, {G, T, 3, heads, dh});
  qkv_out = permute(qkv_out, {2, 0, 3, 1, 4});                      // [3, G, heads, T, dh]
  auto pieces = split(reshape(qkv_out, {3, G * heads, T, dh}), 0, 3);
  Tensor q = reshape(pieces[0], {G * heads, T, dh});
  Tensor k = reshape(pieces[1], {G * heads, T, dh});
  Tensor v = reshape(pieces[2], {G * heads, T, dh});

  Tensor scores = scale(matmul(q, k, /*transpose_b=*/true),
                        1.0 / std::sqrt(static_cast<double>(dh)));  // [G*heads, T, T]
  if (T == window * window) {
    Tensor bias = take_rows(rel_bias, rel_index);                   // [T*T, heads]
    bias = permute(reshape(bias, {T, T, heads}), {2, 0, 1});        // [heads, T, T]
    scores = reshape(add(reshape(scores, {G, heads, T, T}), bias), {G * heads, T, T});
  }
  Tensor attn = softmax_lastdim(scores);
  Tensor out = matmul(attn, v);                                     // [G*heads, T, dh]
  out = reshape(permute(reshape(out, {G, heads, T, dh}), {0, 2, 1, 3}), {G, T, dim});
  return proj(out);
}

Tensor WindowAttention::operator()(const Tensor& x) const {
  const auto& s = x.shape();
  const std::int64_t B = s[0], H = s[2], W = s[3];
  Tensor windows = window_partition(x, static_cast<int>(window));
  Tensor y = forward_windows(windows);
  return window_merge(y, static_cast<int>(window), B, static_cast<int>(H),
                      static_cast<int>(W));
}

void WindowAttention::register_params(ParamRegistry& reg, const std::string& prefix) const {
  qkv.register_params(reg, prefix + ".qkv");
  proj.register_params(reg, prefix + ".proj");
  reg.add(prefix + ".rel_bias", rel_bias);
}

Tensor window_partition(const Tensor& x, int window) {
  const auto& s = x.shape();
  if (s.size() != 4)
    throw std::invalid_argument("window_partition: expected NCHW, got " + shape_str(s));
  const std::int64_t B = s[0], C = s[1], H = s[2], W = s[3];
  if (H % window != 0 || W % window != 0)
    throw std::invalid_argument("window_partition: " + shape_str(s) +
                                " not divisible by window " + std::to_string(window));
  // window-major horizontal layout puts each window in one contiguous span
  const ScanLayout& ly =
      cached_window_layout(static_cast<int>(H), static_cast<int>(W), window,
                           ScanAxis::Horizontal, ScanDir::Forward);
  Tensor seq = layout_gather(x, ly);  // [B, H*W, C]
  const std::int64_t nw = (H / window) * (W / window);
  return reshape(seq, {B * nw, static_cast<std::int64_t>(window) * window, C});
}

Tensor window_merge(const Tensor& windows, int window, std::int64_t b, int h, int w) {
  const auto& s = windows.shape();
  const std::int64_t C = s[2];
  const ScanLayout& ly =
      cached_window_layout(h, w, window, ScanAxis::Horizontal, ScanDir::Forward);
  Tensor seq = reshape(windows, {b, static_cast<std::int64_t>(h) * w, C});
  return layout_scatter(seq, ly);
}

}  // namespace tpm
