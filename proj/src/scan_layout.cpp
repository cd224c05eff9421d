#include "tpm/scan_layout.hpp"

#include <algorithm>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>

namespace tpm {

namespace {

void fill_inverse(ScanLayout& ly) {
  ly.inverse.assign(ly.forward.size(), 0);
  for (std::size_t i = 0; i < ly.forward.size(); ++i)
    ly.inverse[ly.forward[i]] = static_cast<std::int32_t>(i);
}

}  // namespace

ScanLayout build_window_layout(int h, int w, int window, ScanAxis axis, ScanDir dir) {
  if (window < 1 || window > h || window > w)
    throw std::invalid_argument("window layout: window " + std::to_string(window) +
                                " exceeds grid " + std::to_string(h) + "x" + std::to_string(w));
  if (h % window != 0 || w % window != 0)
    throw std::invalid_argument("window layout: grid " + std::to_string(h) + "x" +
                                std::to_string(w) + " not divisible by window " +
                                std::to_string(window));
  ScanLayout ly;
  ly.h = h;
  ly.w = w;
  ly.forward.reserve(static_cast<std::size_t>(h) * w);
  const int nwy = h / window, nwx = w / window;
  if (axis == ScanAxis::Horizontal) {
    for (int wy = 0; wy < nwy; ++wy)
      for (int wx = 0; wx < nwx; ++wx)
        for (int ty = 0; ty < window; ++ty)
          for (int tx = 0; tx < window; ++tx)
            ly.forward.push_back(
                static_cast<std::int32_t>((wy * window + ty) * w + wx * window + tx));
  } else {
    // vertical raster: top-to-bottom first, then next column
    for (int wx = 0; wx < nwx; ++wx)
      for (int wy = 0; wy < nwy; ++wy)
        for (int tx = 0; tx < window; ++tx)
          for (int ty = 0; ty < window; ++ty)
            ly.forward.push_back(
                static_cast<std::int32_t>((wy * window + ty) * w + wx * window + tx));
  }
  if (dir == ScanDir::Reverse) std::reverse(ly.forward.begin(), ly.forward.end());
  fill_inverse(ly);
  return ly;
}

ScanLayout build_cardinal_layout(int h, int w, Cardinal which) {
  ScanLayout ly;
  ly.h = h;
  ly.w = w;
  const std::int64_t n = static_cast<std::int64_t>(h) * w;
  ly.forward.resize(static_cast<std::size_t>(n));
  switch (which) {
    case Cardinal::TopLeftToBottomRight:
      for (std::int64_t i = 0; i < n; ++i) ly.forward[i] = static_cast<std::int32_t>(i);
      break;
    case Cardinal::BottomRightToTopLeft:
      for (std::int64_t i = 0; i < n; ++i) ly.forward[i] = static_cast<std::int32_t>(n - 1 - i);
      break;
    case Cardinal::TopRightToBottomLeft: {
      std::size_t at = 0;
      for (int y = 0; y < h; ++y)
        for (int x = w - 1; x >= 0; --x) ly.forward[at++] = static_cast<std::int32_t>(y * w + x);
      break;
    }
    case Cardinal::BottomLeftToTopRight: {
      std::size_t at = 0;
      for (int y = h - 1; y >= 0; --y)
        for (int x = 0; x < w; ++x) ly.forward[at++] = static_cast<std::int32_t>(y * w + x);
      break;
    }
  }
  fill_inverse(ly);
  return ly;
}

FlattenSchedule direction_schedule(int block_index) {
  if (block_index < 0) throw std::invalid_argument("direction_schedule: negative block index");
  switch (block_index % 4) {
    case 0: return {ScanAxis::Horizontal, ScanDir::Forward, ScanDir::Reverse};
    case 1: return {ScanAxis::Vertical, ScanDir::Forward, ScanDir::Reverse};
    case 2: return {ScanAxis::Horizontal, ScanDir::Reverse, ScanDir::Forward};
    default: return {ScanAxis::Vertical, ScanDir::Reverse, ScanDir::Forward};
  }
}

const ScanLayout& cached_window_layout(int h, int w, int window, ScanAxis axis, ScanDir dir) {
  using Key = std::tuple<int, int, int, int, int>;
  static std::map<Key, ScanLayout> cache;
  const Key key{h, w, window, static_cast<int>(axis), static_cast<int>(dir)};
  auto it = cache.find(key);
  if (it == cache.end())
    it = cache.emplace(key, build_window_layout(h, w, window, axis, dir)).first;
  return it->second;
}

const ScanLayout& cached_cardinal_layout(int h, int w, Cardinal which) {
  using Key = std::tuple<int, int, int>;
  static std::map<Key, ScanLayout> cache;
  const Key key{h, w, static_cast<int>(which)};
  auto it = cache.find(key);
  if (it == cache.end()) it = cache.emplace(key, build_cardinal_layout(h, w, which)).first;
  return it->second;
}

Tensor layout_gather(const Tensor& x, const ScanLayout& layout) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[2] != layout.h || s[3] != layout.w)
    throw std::invalid_argument("layout_gather: tensor " + shape_str(s) +
                                " does not match layout grid " + std::to_string(layout.h) +
                                "x" + std::to_string(layout.w));
  const std::int64_t B = s[0], C = s[1], L = static_cast<std::int64_t>(layout.forward.size());
  const std::int64_t HW = L;
  std::vector<double> out(static_cast<std::size_t>(B * L * C));
  const double* px = x.data().data();
  auto fwd = layout.forward;  // owned copy so the node outlives any cache
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t l = 0; l < L; ++l) {
      const std::int64_t g = fwd[l];
      double* op = out.data() + (b * L + l) * C;
      const double* ip = px + b * C * HW + g;
      for (std::int64_t c = 0; c < C; ++c) op[c] = ip[c * HW];
    }
  auto xi = x.impl();
  return make_op({B, L, C}, std::move(out), {x},
                 [xi, B, C, L, HW, fwd = std::move(fwd)](TensorImpl& o) {
                   double* gx = xi->grad_sink();
                   if (!gx) return;
                   const double* go = o.grad.data();
                   for (std::int64_t b = 0; b < B; ++b)
                     for (std::int64_t l = 0; l < L; ++l) {
                       const std::int64_t g = fwd[l];
                       const double* op = go + (b * L + l) * C;
                       double* ip = gx + b * C * HW + g;
                       for (std::int64_t c = 0; c < C; ++c) ip[c * HW] += op[c];
                     }
                 });
}

Tensor layout_scatter(const Tensor& seq, const ScanLayout& layout) {
  const auto& s = seq.shape();
  const std::int64_t L = static_cast<std::int64_t>(layout.forward.size());
  if (s.size() != 3 || s[1] != L)
    throw std::invalid_argument("layout_scatter: sequence " + shape_str(s) +
                                " does not match layout length " + std::to_string(L));
  const std::int64_t B = s[0], C = s[2];
  const std::int64_t H = layout.h, W = layout.w;
  std::vector<double> out(static_cast<std::size_t>(B * C * H * W));
  const double* ps = seq.data().data();
  auto fwd = layout.forward;
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t l = 0; l < L; ++l) {
      const std::int64_t g = fwd[l];
      const double* ip = ps + (b * L + l) * C;
      double* op = out.data() + b * C * L + g;
      for (std::int64_t c = 0; c < C; ++c) op[c * L] = ip[c];
    }
  auto si = seq.impl();
  return make_op({B, C, H, W}, std::move(out), {seq},
                 [si, B, C, L, fwd = std::move(fwd)](TensorImpl& o) {
                   double* gs = si->grad_sink();
                   if (!gs) return;
                   const double* go = o.grad.data();
                   for (std::int64_t b = 0; b < B; ++b)
                     for (std::int64_t l = 0; l < L; ++l) {
                       const std::int64_t g = fwd[l];
                       double* ip = gs + (b * L + l) * C;
                       const double* op = go + b * C * L + g;
                       for (std::int64_t c = 0; c < C; ++c) ip[c] += op[c * L];
                     }
                 });
}

}  // namespace tpm
