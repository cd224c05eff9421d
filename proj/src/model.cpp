#include "tpm/model.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "tpm/errors.hpp"
#include "tpm/rng.hpp"

namespace tpm {

namespace {

void check_input(const Tensor& x, int /*scale*/) {
  const auto& s = x.shape();
  if (s.size() != 4 || s[1] != 3)
    throw std::invalid_argument("model: expected [B,3,H,W] input, got " + shape_str(s));
  if (s[2] < 8 || s[3] < 8)
    throw std::invalid_argument("model: input " + shape_str(s) + " smaller than 8x8");
  for (double v : x.data())
    if (!std::isfinite(v)) throw std::invalid_argument("model: non-finite input value");
}

int pad_amount(std::int64_t extent, int multiple) {
  const int rem = static_cast<int>(extent % multiple);
  return rem == 0 ? 0 : multiple - rem;
}

}  // namespace

TpmModel::TpmModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng(seed);
  shallow_ = Conv2dLayer(3, cfg_.width, 3, rng);
  groups_.reserve(cfg_.groups);
  for (int g = 0; g < cfg_.groups; ++g) groups_.emplace_back(cfg_, rng);
  const std::int64_t out_ch = 3LL * cfg_.scale * cfg_.scale;
  head_ = Conv2dLayer(cfg_.width, out_ch, 3, rng);

  shallow_.register_params(registry_, "shallow");
  for (int g = 0; g < cfg_.groups; ++g)
    groups_[g].register_params(registry_, "group" + std::to_string(g));
  head_.register_params(registry_, "head");
}

Tensor TpmModel::run_body(const Tensor& i_lr, Tensor* shallow_out) const {
  check_input(i_lr, cfg_.scale);
  const std::int64_t H = i_lr.dim(2), W = i_lr.dim(3);
  Tensor f_s = shallow_(i_lr);
  if (shallow_out) *shallow_out = f_s;
  const int m = cfg_.pad_multiple();
  const int ph = pad_amount(H, m), pw = pad_amount(W, m);
  Tensor u = (ph || pw) ? pad_reflect(f_s, 0, ph, 0, pw) : f_s;
  for (int g = 0; g < cfg_.groups; ++g) u = groups_[g](u, g * cfg_.blocks_per_group);
  if (ph || pw) u = crop(u, 0, 0, static_cast<int>(H), static_cast<int>(W));
  return u;
}

Tensor TpmModel::forward(const Tensor& i_lr) const {
  // deep body rides on the groups' residual paths; the crop of the padded
  // trunk is the fused shallow+deep feature
  Tensor f_r = run_body(i_lr, nullptr);
  return pixel_shuffle(head_(f_r), cfg_.scale);
}

Tensor TpmModel::forward_probe(const Tensor& i_lr, ProbeStage stage) const {
  check_input(i_lr, cfg_.scale);
  Tensor f_s = shallow_(i_lr);
  const int m = cfg_.pad_multiple();
  const int ph = pad_amount(i_lr.dim(2), m), pw = pad_amount(i_lr.dim(3), m);
  Tensor u = (ph || pw) ? pad_reflect(f_s, 0, ph, 0, pw) : f_s;
  const TpmGroup& g0 = groups_.front();
  switch (stage) {
    case ProbeStage::Tl:
      return g0.blocks.front().tl(u);
    case ProbeStage::TlWsml:
      return g0.blocks.front()(u, 0);
    case ProbeStage::Gsml: {
      for (std::size_t i = 0; i < g0.blocks.size(); ++i)
        u = g0.blocks[i](u, static_cast<int>(i));
      return g0.gsml(u, 0);
    }
  }
  throw std::logic_error("forward_probe: unreachable");
}

TpmModel::FreqCapture TpmModel::freq_capture(const Tensor& i_lr, int group_index) const {
  if (group_index < 0 || group_index >= cfg_.groups)
    throw std::invalid_argument("freq_capture: group index out of range");
  check_input(i_lr, cfg_.scale);
  Tensor f_s = shallow_(i_lr);
  const int m = cfg_.pad_multiple();
  const int ph = pad_amount(i_lr.dim(2), m), pw = pad_amount(i_lr.dim(3), m);
  Tensor u = (ph || pw) ? pad_reflect(f_s, 0, ph, 0, pw) : f_s;
  for (int g = 0; g < group_index; ++g) u = groups_[g](u, g * cfg_.blocks_per_group);

  FreqCapture cap;
  cap.x_ori = u;
  const TpmGroup& grp = groups_[group_index];
  const int base = group_index * cfg_.blocks_per_group;
  Tensor v = u;
  if (grp.order == StageOrder::GlobalLocalRegional) v = grp.gsml(v, base);
  for (std::size_t i = 0; i < grp.blocks.size(); ++i)
    v = grp.blocks[i](v, base + static_cast<int>(i));
  if (grp.order != StageOrder::GlobalLocalRegional) v = grp.gsml(v, base);
  cap.x_lf = v;
  cap.refined = grp.ahfrm(u, v);
  return cap;
}

// ---------------------------------------------------------------------------
// checkpoint container
// ---------------------------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'T', 'P', 'M', 'B'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, sizeof(bits));
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t at = 0;

  void need(std::size_t n, const char* what) const {
    if (at + n > buf.size()) throw IoError(std::string("checkpoint truncated reading ") + what);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at++])) << (8 * i);
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[at++])) << (8 * i);
    return v;
  }
  double f64(const char* what) {
    const std::uint64_t bits = u64(what);
    double d;
    std::memcpy(&d, &bits, sizeof(d));
    return d;
  }
  std::string bytes(std::size_t n, const char* what) {
    need(n, what);
    std::string s = buf.substr(at, n);
    at += n;
    return s;
  }
};

}  // namespace

void TensorStore::save(const std::string& path) const {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kVersion);
  put_u64(out, config_text.size());
  out += config_text;
  put_u64(out, entries.size());
  std::uint64_t offset = 0;
  for (const auto& [name, t] : entries) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.shape().size()));
    for (auto e : t.shape()) put_u64(out, static_cast<std::uint64_t>(e));
    put_u64(out, offset);
    offset += static_cast<std::uint64_t>(t.numel());
  }
  put_u64(out, offset);
  for (const auto& [name, t] : entries)
    for (double v : t.data()) put_f64(out, v);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw IoError("cannot move " + tmp + " to " + path);
}

TensorStore TensorStore::load_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r{buf};

  const std::string magic = r.bytes(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw IoError(path + ": bad magic, not a checkpoint");
  const std::uint32_t version = r.u32("version");
  if (version != kVersion)
    throw IoError(path + ": unsupported checkpoint version " + std::to_string(version));

  TensorStore store;
  const std::uint64_t cfg_len = r.u64("config length");
  store.config_text = r.bytes(cfg_len, "config");

  const std::uint64_t count = r.u64("entry count");
  struct Meta {
    std::string name;
    Shape shape;
    std::uint64_t offset;
  };
  std::vector<Meta> metas;
  metas.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    Meta m;
    const std::uint32_t name_len = r.u32("name length");
    m.name = r.bytes(name_len, "name");
    const std::uint32_t ndim = r.u32("rank");
    m.shape.resize(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) m.shape[d] = static_cast<std::int64_t>(r.u64("dim"));
    m.offset = r.u64("offset");
    metas.push_back(std::move(m));
  }
  const std::uint64_t payload = r.u64("payload length");
  r.need(payload * 8, "payload");
  for (auto& m : metas) {
    const std::int64_t n = shape_numel(m.shape);
    if (m.offset + static_cast<std::uint64_t>(n) > payload)
      throw IoError(path + ": entry '" + m.name + "' exceeds payload");
    std::vector<double> data(static_cast<std::size_t>(n));
    std::size_t pos = r.at + m.offset * 8;
    for (std::int64_t i = 0; i < n; ++i) {
      std::uint64_t bits = 0;
      for (int by = 0; by < 8; ++by)
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * by);
      std::memcpy(&data[i], &bits, sizeof(double));
    }
    store.entries.emplace_back(m.name, Tensor::from_data(m.shape, std::move(data)));
  }
  return store;
}

void TpmModel::save(const std::string& path) const {
  TensorStore store;
  store.config_text = cfg_.to_text();
  for (const auto& [name, t] : registry_.items) store.entries.emplace_back(name, t);
  store.save(path);
}

TpmModel TpmModel::load(const std::string& path) {
  TensorStore store = TensorStore::load_file(path);
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_text(store.config_text);
  } catch (const std::exception& e) {
    throw IoError(path + ": invalid config snapshot: " + e.what());
  }
  TpmModel model(cfg, /*seed=*/0);
  if (store.entries.size() != model.registry_.items.size())
    throw IoError(path + ": checkpoint holds " + std::to_string(store.entries.size()) +
                  " tensors, model needs " + std::to_string(model.registry_.items.size()));
  std::size_t idx = 0;
  for (auto& [name, t] : model.registry_.items) {
    // entries are written in registration order; verify instead of trusting
    const auto& [fname, ft] = store.entries[idx++];
    if (fname != name)
      throw IoError(path + ": unexpected parameter '" + fname + "', wanted '" + name + "'");
    if (ft.shape() != t.shape())
      throw IoError(path + ": parameter '" + name + "' has shape " + shape_str(ft.shape()) +
                    ", expected " + shape_str(t.shape()));
    t.data() = ft.data();
  }
  return model;
}

TpmModel TpmModel::load(const std::string& path, const ModelConfig& expect) {
  TpmModel model = load(path);
  if (!(model.cfg_ == expect))
    throw IoError(path + ": checkpoint config does not match the requested config");
  return model;
}

// ---------------------------------------------------------------------------
// audits
// ---------------------------------------------------------------------------

ParamReport count_params(const ModelConfig& cfg) {
  // exact by construction: instantiate and walk the registry
  TpmModel model(cfg, /*seed=*/0);
  ParamReport rep;
  for (const auto& [name, t] : model.params().items) {
    std::string bucket = "other";
    if (name.rfind("shallow", 0) == 0) bucket = "shallow";
    else if (name.rfind("head", 0) == 0) bucket = "upsampler";
    else if (name.find(".tl.") != std::string::npos) bucket = "transformer";
    else if (name.find(".wsml.") != std::string::npos) bucket = "window_scan";
    else if (name.find(".gsml.") != std::string::npos) bucket = "global_scan";
    else if (name.find(".ahfrm.") != std::string::npos) bucket = "refinement";
    else if (name.find(".conv.") != std::string::npos) bucket = "group_conv";
    rep.by_module[bucket] += t.numel();
    rep.total += t.numel();
  }
  return rep;
}

namespace {

// MACs of one selective-SSM head per sequence position:
// B/C projections, low-rank delta projection, per-state discretization,
// recurrence and readout, plus the skip multiply.
std::int64_t ssm_macs_per_pos(std::int64_t d, std::int64_t n) {
  const std::int64_t rank = SsmParams::rank_for(d);
  const std::int64_t proj = 2 * d * n + d * rank + rank * d;
  const std::int64_t scan = d * (5 * n + 1);
  return proj + scan;
}

}  // namespace

FlopReport count_flops(const ModelConfig& cfg, int out_h, int out_w) {
  cfg.validate();
  const std::int64_t H = out_h / cfg.scale, W = out_w / cfg.scale;
  const int m = cfg.pad_multiple();
  const std::int64_t Hp = H + pad_amount(H, m), Wp = W + pad_amount(W, m);
  const std::int64_t px = H * W;        // head/shallow resolution
  const std::int64_t bpx = Hp * Wp;     // body resolution
  const std::int64_t C = cfg.width;
  const std::int64_t layers_tl = static_cast<std::int64_t>(cfg.groups) * cfg.blocks_per_group;

  FlopReport rep;
  auto put = [&rep](const std::string& k, std::int64_t v) {
    rep.by_module[k] += v;
    rep.total += v;
  };

  // shallow conv: 3x3, 3 -> C, at input resolution
  put("shallow", px * C * 3 * 9);

  // attention per position: fused QKV (3C^2) + output projection (C^2)
  // + scores and weighted sum (2 * T * C with T = window^2 tokens)
  const std::int64_t T = static_cast<std::int64_t>(cfg.window_attn) * cfg.window_attn;
  const std::int64_t attn_pp = 4 * C * C + 2 * T * C;
  put("transformer", layers_tl * bpx * attn_pp);

  // every layer's FFN: two C x (ratio*C) linears
  const std::int64_t ffn_pp = 2 * C * C * cfg.ffn_ratio;
  const std::int64_t layer_count = 2 * layers_tl + cfg.groups;  // TL + WSML + GSML
  put("ffn", layer_count * bpx * ffn_pp);

  // gated scan mixer per position: in/out projections (2C^2) + depthwise
  // gate (9C) + the scan core
  const std::int64_t mixer_fixed = 2 * C * C + 9 * C;
  const std::int64_t wscan_pp =
      cfg.scan_window == WindowScanVariant::Mwss ? 2 * ssm_macs_per_pos(C / 2, cfg.n_state)
                                                 : 4 * ssm_macs_per_pos(C, cfg.n_state);
  put("window_scan", layers_tl * bpx * (mixer_fixed + wscan_pp));
  const std::int64_t gscan_pp =
      cfg.scan_global == GlobalScanVariant::Mgss ? 4 * ssm_macs_per_pos(C / 4, cfg.n_state)
                                                 : 4 * ssm_macs_per_pos(C, cfg.n_state);
  put("global_scan", static_cast<std::int64_t>(cfg.groups) * bpx * (mixer_fixed + gscan_pp));

  // refinement: MSGM depthwise 3/5/7 + gate, branch convs, fuse, out conv;
  // HFCA is per-image and negligible but exact to include
  const std::int64_t ahfrm_pp = C * (9 + 25 + 49) + C * C  // msgm
                                + 9 * C                    // ref dwconv
                                + C * C                    // deg 1x1
                                + 2 * C * C                // fuse
                                + C * C;                   // out 1x1
  const std::int64_t hfca_per_img = 2 * C * (C / 4);
  put("refinement", static_cast<std::int64_t>(cfg.groups) * (bpx * ahfrm_pp + hfca_per_img));

  // per-group 3x3 conv
  put("group_conv", static_cast<std::int64_t>(cfg.groups) * bpx * 9 * C * C);

  // upsampler: 3x3 conv C -> 3 r^2 at input resolution; pixel shuffle is free
  put("upsampler", px * 9 * C * 3 * cfg.scale * cfg.scale);

  return rep;
}

}  // namespace tpm
