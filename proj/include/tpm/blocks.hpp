#pragma once

#include <vector>

#include "tpm/config.hpp"
#include "tpm/freq_refine.hpp"
#include "tpm/nn.hpp"
#include "tpm/scan_layout.hpp"
#include "tpm/ssm.hpp"
#include "tpm/tensor.hpp"
#include "tpm/window_attention.hpp"

namespace tpm {

// [B,C,H,W] <-> [B,H,W,C]
Tensor to_channels_last(const Tensor& x);
Tensor to_channels_first(const Tensor& x);

struct Ffn {
  Linear fc1, fc2;

  Ffn() = default;
  Ffn(std::int64_t channels, int ratio, Rng& rng);
  // channels-last input
  Tensor operator()(const Tensor& x) const;
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

// The scan stage of a mixer: which sequences are built and how many
// independent SSM heads consume them.
struct ScanCore {
  enum class Kind { Mwss, Mgss, Ss2d };
  Kind kind = Kind::Mwss;
  int wif = 16, wff = 32;
  std::vector<SsmParams> ssms;

  ScanCore() = default;
  static ScanCore make_mwss(std::int64_t channels, std::int64_t n_state, int wif, int wff,
                            Rng& rng);
  static ScanCore make_mgss(std::int64_t channels, std::int64_t n_state, Rng& rng);
  static ScanCore make_ss2d(std::int64_t channels, std::int64_t n_state, Rng& rng);

  // x: [B,C,H,W]; block_index drives the flatten schedule (MWSS only)
  Tensor operator()(const Tensor& x, int block_index) const;
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

// Gated selective-scan mixer shared by the window and global stages:
// project, gate with a sigmoid depthwise conv, scan, norm, project out.
struct SsmMixer {
  Linear in_proj;
  Conv2dLayer gate_dw;
  ScanCore core;
  LayerNormParams out_ln;
  Linear out_proj;

  SsmMixer() = default;
  SsmMixer(std::int64_t channels, ScanCore core_, Rng& rng);
  Tensor operator()(const Tensor& x, int block_index) const;
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

// Pre-norm residual wrapper: x + mixer(LN(x)), then x + FFN(LN(x)).
struct TransformerLayer {
  LayerNormParams ln1, ln2;
  WindowAttention attn;
  Ffn ffn;

  TransformerLayer() = default;
  TransformerLayer(const ModelConfig& cfg, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

struct SsmLayer {
  LayerNormParams ln1, ln2;
  SsmMixer mixer;
  Ffn ffn;

  SsmLayer() = default;
  SsmLayer(std::int64_t channels, int ffn_ratio, ScanCore core, Rng& rng);
  Tensor operator()(const Tensor& x, int block_index) const;
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

// One T-WSM block: the local stage and the regional stage.
struct TwsmBlock {
  TransformerLayer tl;
  SsmLayer wsml;
  bool tl_first = true;

  TwsmBlock() = default;
  TwsmBlock(const ModelConfig& cfg, Rng& rng);
  Tensor operator()(const Tensor& x, int block_index) const;
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

// N blocks, the global stage, high-frequency refinement against the group
// input, a conv, and a residual connection around the whole group.
struct TpmGroup {
  std::vector<TwsmBlock> blocks;
  SsmLayer gsml;
  Ahfrm ahfrm;
  Conv2dLayer conv;
  StageOrder order = StageOrder::LocalRegionalGlobal;

  TpmGroup() = default;
  TpmGroup(const ModelConfig& cfg, Rng& rng);
  Tensor operator()(const Tensor& x, int base_block_index) const;
  void register_params(ParamRegistry& reg, const std::string& prefix) const;
};

}  // namespace tpm
