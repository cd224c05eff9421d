#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "tpm/blocks.hpp"
#include "tpm/config.hpp"
#include "tpm/nn.hpp"
#include "tpm/tensor.hpp"

namespace tpm {

// End-to-end network: shallow conv, T-PM groups over padded features, crop,
// sub-pixel upsampling head. The shallow feature rides through the groups'
// residual paths, so zeroing every group contribution collapses the model
// to head(shallow(x)).
class TpmModel {
 public:
  TpmModel(const ModelConfig& cfg, std::uint64_t seed);

  // i_lr: [B, 3, H, W] in [0,1], H and W >= 8 -> [B, 3, r*H, r*W]
  Tensor forward(const Tensor& i_lr) const;

  // Truncated forward for receptive-field probing (default stage order):
  // body feature after the first TL, after the first full block, or after
  // group 0's GSML. Returns the padded body feature [B, C, Hp, Wp].
  enum class ProbeStage { Tl, TlWsml, Gsml };
  Tensor forward_probe(const Tensor& i_lr, ProbeStage stage) const;

  // Captures one group's AHFRM operands/result during a forward pass.
  struct FreqCapture {
    Tensor x_ori;     // group input (pristine reference)
    Tensor x_lf;      // processed feature entering AHFRM
    Tensor refined;   // AHFRM output
  };
  FreqCapture freq_capture(const Tensor& i_lr, int group_index) const;

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& params() { return registry_; }
  const ParamRegistry& params() const { return registry_; }

  void save(const std::string& path) const;
  static TpmModel load(const std::string& path);
  // rejects the checkpoint when its config snapshot differs from `expect`
  static TpmModel load(const std::string& path, const ModelConfig& expect);

 private:
  Tensor run_body(const Tensor& i_lr, Tensor* shallow_out) const;

  ModelConfig cfg_;
  Conv2dLayer shallow_;
  std::vector<TpmGroup> groups_;
  Conv2dLayer head_;
  ParamRegistry registry_;
};

// ---- audits ----

// Exact learned-parameter counts, grouped by stage.
struct ParamReport {
  std::map<std::string, std::int64_t> by_module;
  std::int64_t total = 0;
};
ParamReport count_params(const ModelConfig& cfg);

// Multiply-accumulate audit at a given output resolution. One MAC is
// counted per fused multiply-add in conv/linear/attention/scan; norms,
// gates, pooling and residual adds are excluded (< 1% combined). This
// matches how the lightweight-SR literature reports "FLOPs".
struct FlopReport {
  std::map<std::string, std::int64_t> by_module;
  std::int64_t total = 0;
};
FlopReport count_flops(const ModelConfig& cfg, int out_h = 720, int out_w = 1280);

// Named tensor container shared by model checkpoints and trainer state.
struct TensorStore {
  std::string config_text;
  std::vector<std::pair<std::string, Tensor>> entries;

  void save(const std::string& path) const;  // atomic: temp file + rename
  static TensorStore load_file(const std::string& path);
};

}  // namespace tpm
