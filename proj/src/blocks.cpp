#include "tpm/blocks.hpp"

#include <stdexcept>

namespace tpm {

Tensor to_channels_last(const Tensor& x) { return permute(x, {0, 2, 3, 1}); }
Tensor to_channels_first(const Tensor& x) { return permute(x, {0, 3, 1, 2}); }

namespace {
// layer norm over the channel axis of an NCHW tensor
Tensor ln_channels(const Tensor& x, const LayerNormParams& ln) {
  return to_channels_first(ln(to_channels_last(x)));
}
}  // namespace

Ffn::Ffn(std::int64_t channels, int ratio, Rng& rng)
    : fc1(channels, channels * ratio, rng),
      fc2(channels * ratio, channels, rng, /*bias=*/true, /*weight_gain=*/0.1) {}

Tensor Ffn::operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

void Ffn::register_params(ParamRegistry& reg, const std::string& prefix) const {
  fc1.register_params(reg, prefix + ".fc1");
  fc2.register_params(reg, prefix + ".fc2");
}

ScanCore ScanCore::make_mwss(std::int64_t channels, std::int64_t n_state, int wif, int wff,
                             Rng& rng) {
  if (channels % 2 != 0)
    throw std::invalid_argument("mwss: odd channel count " + std::to_string(channels));
  ScanCore core;
  core.kind = Kind::Mwss;
  core.wif = wif;
  core.wff = wff;
  core.ssms.emplace_back(channels / 2, n_state, rng);
  core.ssms.emplace_back(channels / 2, n_state, rng);
  return core;
}

ScanCore ScanCore::make_mgss(std::int64_t channels, std::int64_t n_state, Rng& rng) {
  if (channels % 4 != 0)
    throw std::invalid_argument("mgss: channels " + std::to_string(channels) +
                                " not divisible by 4");
  ScanCore core;
  core.kind = Kind::Mgss;
  for (int q = 0; q < 4; ++q) core.ssms.emplace_back(channels / 4, n_state, rng);
  return core;
}

ScanCore ScanCore::make_ss2d(std::int64_t channels, std::int64_t n_state, Rng& rng) {
  ScanCore core;
  core.kind = Kind::Ss2d;
  for (int q = 0; q < 4; ++q) core.ssms.emplace_back(channels, n_state, rng);
  return core;
}

Tensor ScanCore::operator()(const Tensor& x, int block_index) const {
  const auto& s = x.shape();
  const int H = static_cast<int>(s[2]), W = static_cast<int>(s[3]);
  switch (kind) {
    case Kind::Mwss: {
      const FlattenSchedule sched = direction_schedule(block_index);
      const ScanLayout& ly_i = cached_window_layout(H, W, wif, sched.axis, sched.wif_dir);
      const ScanLayout& ly_f = cached_window_layout(H, W, wff, sched.axis, sched.wff_dir);
      auto halves = split(x, 1, 2);
      Tensor yi = layout_scatter(ssms[0].apply(layout_gather(halves[0], ly_i)), ly_i);
      Tensor yf = layout_scatter(ssms[1].apply(layout_gather(halves[1], ly_f)), ly_f);
      return concat({yi, yf}, 1);
    }
    case Kind::Mgss: {
      auto quarters = split(x, 1, 4);
      std::vector<Tensor> outs;
      outs.reserve(4);
      for (int q = 0; q < 4; ++q) {
        const ScanLayout& ly = cached_cardinal_layout(H, W, static_cast<Cardinal>(q));
        outs.push_back(layout_scatter(ssms[q].apply(layout_gather(quarters[q], ly)), ly));
      }
      return concat(outs, 1);
    }
    case Kind::Ss2d: {
      // replicate, scan the full tensor along all four rasters, sum
      Tensor acc;
      for (int q = 0; q < 4; ++q) {
        const ScanLayout& ly = cached_cardinal_layout(H, W, static_cast<Cardinal>(q));
        Tensor y = layout_scatter(ssms[q].apply(layout_gather(x, ly)), ly);
        acc = acc.defined() ? add(acc, y) : y;
      }
      return acc;
    }
  }
  throw std::logic_error("scan core: unreachable");
}

void ScanCore::register_params(ParamRegistry& reg, const std::string& prefix) const {
  for (std::size_t i = 0; i < ssms.size(); ++i)
    ssms[i].register_params(reg, prefix + ".ssm" + std::to_string(i));
}

SsmMixer::SsmMixer(std::int64_t channels, ScanCore core_, Rng& rng)
    : in_proj(channels, channels, rng),
      gate_dw(channels, channels, 3, rng, static_cast<int>(channels)),
      core(std::move(core_)),
      out_ln(channels),
      out_proj(channels, channels, rng, /*bias=*/true, /*weight_gain=*/0.1) {}

Tensor SsmMixer::operator()(const Tensor& x, int block_index) const {
  Tensor p = to_channels_first(in_proj(to_channels_last(x)));
  Tensor gated = mul(p, sigmoid(gate_dw(p)));
  Tensor scanned = core(gated, block_index);
  return to_channels_first(out_proj(out_ln(to_channels_last(scanned))));
}

void SsmMixer::register_params(ParamRegistry& reg, const std::string& prefix) const {
  in_proj.register_params(reg, prefix + ".in_proj");
  gate_dw.register_params(reg, prefix + ".gate_dw");
  core.register_params(reg, prefix + ".core");
  out_ln.register_params(reg, prefix + ".out_ln");
  out_proj.register_params(reg, prefix + ".out_proj");
}

TransformerLayer::TransformerLayer(const ModelConfig& cfg, Rng& rng)
    : ln1(cfg.width),
      ln2(cfg.width),
      attn(cfg.width, cfg.heads, cfg.window_attn, rng),
      ffn(cfg.width, cfg.ffn_ratio, rng) {}

Tensor TransformerLayer::operator()(const Tensor& x) const {
  Tensor x1 = add(x, attn(ln_channels(x, ln1)));
  Tensor f = to_channels_first(ffn(ln2(to_channels_last(x1))));
  return add(x1, f);
}

void TransformerLayer::register_params(ParamRegistry& reg, const std::string& prefix) const {
  ln1.register_params(reg, prefix + ".ln1");
  attn.register_params(reg, prefix + ".attn");
  ln2.register_params(reg, prefix + ".ln2");
  ffn.register_params(reg, prefix + ".ffn");
}

SsmLayer::SsmLayer(std::int64_t channels, int ffn_ratio, ScanCore core, Rng& rng)
    : ln1(channels), ln2(channels), mixer(channels, std::move(core), rng),
      ffn(channels, ffn_ratio, rng) {}

Tensor SsmLayer::operator()(const Tensor& x, int block_index) const {
  Tensor x1 = add(x, mixer(ln_channels(x, ln1), block_index));
  Tensor f = to_channels_first(ffn(ln2(to_channels_last(x1))));
  return add(x1, f);
}

void SsmLayer::register_params(ParamRegistry& reg, const std::string& prefix) const {
  ln1.register_params(reg, prefix + ".ln1");
  mixer.register_params(reg, prefix + ".mixer");
  ln2.register_params(reg, prefix + ".ln2");
  ffn.register_params(reg, prefix + ".ffn");
}

TwsmBlock::TwsmBlock(const ModelConfig& cfg, Rng& rng)
    : tl(cfg, rng),
      wsml(cfg.width, cfg.ffn_ratio,
           cfg.scan_window == WindowScanVariant::Mwss
               ? ScanCore::make_mwss(cfg.width, cfg.n_state, cfg.wif, cfg.wff, rng)
               : ScanCore::make_ss2d(cfg.width, cfg.n_state, rng),
           rng),
      tl_first(cfg.stage_order != StageOrder::RegionalLocalGlobal) {}

Tensor TwsmBlock::operator()(const Tensor& x, int block_index) const {
  if (tl_first) return wsml(tl(x), block_index);
  return tl(wsml(x, block_index));
}

void TwsmBlock::register_params(ParamRegistry& reg, const std::string& prefix) const {
  tl.register_params(reg, prefix + ".tl");
  wsml.register_params(reg, prefix + ".wsml");
}

TpmGroup::TpmGroup(const ModelConfig& cfg, Rng& rng) : order(cfg.stage_order) {
  blocks.reserve(cfg.blocks_per_group);
  for (int i = 0; i < cfg.blocks_per_group; ++i) blocks.emplace_back(cfg, rng);
  gsml = SsmLayer(cfg.width, cfg.ffn_ratio,
                  cfg.scan_global == GlobalScanVariant::Mgss
                      ? ScanCore::make_mgss(cfg.width, cfg.n_state, rng)
                      : ScanCore::make_ss2d(cfg.width, cfg.n_state, rng),
                  rng);
  ahfrm = Ahfrm(cfg.width, rng, cfg.use_hfm, cfg.hfca_source);
  conv = Conv2dLayer(cfg.width, cfg.width, 3, rng, 1, /*weight_gain=*/0.1);
}

Tensor TpmGroup::operator()(const Tensor& x, int base_block_index) const {
  Tensor u = x;
  if (order == StageOrder::GlobalLocalRegional) u = gsml(u, base_block_index);
  for (std::size_t i = 0; i < blocks.size(); ++i)
    u = blocks[i](u, base_block_index + static_cast<int>(i));
  if (order != StageOrder::GlobalLocalRegional) u = gsml(u, base_block_index);
  u = ahfrm(x, u);
  u = conv(u);
  return add(x, u);
}

void TpmGroup::register_params(ParamRegistry& reg, const std::string& prefix) const {
  for (std::size_t i = 0; i < blocks.size(); ++i)
    blocks[i].register_params(reg, prefix + ".block" + std::to_string(i));
  gsml.register_params(reg, prefix + ".gsml");
  ahfrm.register_params(reg, prefix + ".ahfrm");
  conv.register_params(reg, prefix + ".conv");
}

}  // namespace tpm
