#pragma once

#include <cstdint>
#include <vector>

#include "tpm/nn.hpp"
#include "tpm/tensor.hpp"

namespace tpm {

// Non-shifted window multi-head self-attention with a learned relative
// position bias table of (2*window-1)^2 entries per head.
struct WindowAttention {
  std::int64_t dim = 0, heads = 0, window = 0;
  Linear qkv;   // fused C -> 3C
  Linear proj;  // C -> C
  Tensor rel_bias;                    // [(2w-1)^2, heads]
  std::vector<std::int32_t> rel_index;  // [T*T] lookups into rel_bias

  WindowAttention() = default;
  WindowAttention(std::int64_t dim, std::int64_t heads, std::int64_t window, Rng& rng);

  // x_windows: [G, T, C]; windows attend independently. The relative bias
  // is defined for T == window^2 and skipped for other token counts.
  Tensor forward_windows(const Tensor& x_windows) const;

  // [B, C, H, W] with H, W divisible by window: partition, attend, merge.
  Tensor operator()(const Tensor& x) const;

  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

// Window partition/merge as bijective reshapes of the window-major layout.
Tensor window_partition(const Tensor& x, int window);                  // -> [B*nw, w^2, C]
Tensor window_merge(const Tensor& windows, int window, std::int64_t b, int h, int w);

}  // namespace tpm
