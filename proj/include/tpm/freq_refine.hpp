#pragma once

#include "tpm/nn.hpp"
#include "tpm/tensor.hpp"

namespace tpm {

// High-frequency filter: subtract the bilinearly re-upsampled 2x2-pooled
// copy. f == hfm(f) + bilinear_up2(avg_pool2(f)) holds bit-exactly and a
// constant image maps to exactly zero.
Tensor hfm(const Tensor& f);

// Multi-scale gating: parallel depthwise 3/5/7 convs, summed, squeezed
// through a sigmoid 1x1 gate that modulates the input.
struct Msgm {
  Conv2dLayer dw3, dw5, dw7;
  Conv2dLayer gate;  // 1x1

  Msgm() = default;
  Msgm(std::int64_t channels, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

// Channel attention map M in (0,1)^{C x 1 x 1}: squeeze-excite, reduction 4.
struct Hfca {
  Conv2dLayer fc1, fc2;  // C -> C/4 -> C, both 1x1

  Hfca() = default;
  Hfca(std::int64_t channels, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

// Which tensor feeds the channel-attention map. The module equation names
// the processed feature; the surrounding text names the degraded
// high-frequency branch. Both are selectable; the equation is the default.
enum class HfcaSource { ProcessedFeature, DegradedBranch };

// Adaptive high-frequency refinement: a pristine reference branch guides
// restoration of the high frequencies the processed branch lost.
struct Ahfrm {
  Msgm msgm;
  Conv2dLayer ref_dwconv;  // depthwise 3x3
  Conv2dLayer deg_conv1;   // 1x1
  Conv2dLayer fuse_conv1;  // 2C -> C, 1x1
  Hfca hfca;
  Conv2dLayer out_conv1;   // 1x1
  bool use_hfm = true;
  HfcaSource hfca_source = HfcaSource::ProcessedFeature;

  Ahfrm() = default;
  Ahfrm(std::int64_t channels, Rng& rng, bool use_hfm_ = true,
        HfcaSource source = HfcaSource::ProcessedFeature);

  // x_ori: unprocessed group input; x_lf: processed feature. Same shapes,
  // even extents when use_hfm.
  Tensor operator()(const Tensor& x_ori, const Tensor& x_lf) const;
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

}  // namespace tpm
