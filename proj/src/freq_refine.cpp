#include "tpm/freq_refine.hpp"

#include <stdexcept>

namespace tpm {

Tensor hfm(const Tensor& f) {
  return sub(f, bilinear_up2(avg_pool2(f)));
}

Msgm::Msgm(std::int64_t channels, Rng& rng)
    : dw3(channels, channels, 3, rng, static_cast<int>(channels)),
      dw5(channels, channels, 5, rng, static_cast<int>(channels)),
      dw7(channels, channels, 7, rng, static_cast<int>(channels)),
      gate(channels, channels, 1, rng) {}

Tensor Msgm::operator()(const Tensor& x) const {
  Tensor s = add(add(dw3(x), dw5(x)), dw7(x));
  return mul(x, sigmoid(gate(s)));
}

void Msgm::register_params(ParamRegistry& reg, const std::string& prefix) const {
  dw3.register_params(reg, prefix + ".dw3");
  dw5.register_params(reg, prefix + ".dw5");
  dw7.register_params(reg, prefix + ".dw7");
  gate.register_params(reg, prefix + ".gate");
}

Hfca::Hfca(std::int64_t channels, Rng& rng)
    : fc1(channels, std::max<std::int64_t>(channels / 4, 1), 1, rng),
      fc2(std::max<std::int64_t>(channels / 4, 1), channels, 1, rng) {}

Tensor Hfca::operator()(const Tensor& x) const {
  return sigmoid(fc2(relu(fc1(mean_hw(x)))));
}

void Hfca::register_params(ParamRegistry& reg, const std::string& prefix) const {
  fc1.register_params(reg, prefix + ".fc1");
  fc2.register_params(reg, prefix + ".fc2");
}

Ahfrm::Ahfrm(std::int64_t channels, Rng& rng, bool use_hfm_, HfcaSource source)
    : msgm(channels, rng),
      ref_dwconv(channels, channels, 3, rng, static_cast<int>(channels)),
      deg_conv1(channels, channels, 1, rng),
      fuse_conv1(2 * channels, channels, 1, rng),
      hfca(channels, rng),
      out_conv1(channels, channels, 1, rng),
      use_hfm(use_hfm_),
      hfca_source(source) {}

Tensor Ahfrm::operator()(const Tensor& x_ori, const Tensor& x_lf) const {
  if (x_ori.shape() != x_lf.shape())
    throw std::invalid_argument("ahfrm: input shapes differ, " + shape_str(x_ori.shape()) +
                                " vs " + shape_str(x_lf.shape()));
  Tensor ref = msgm(x_ori);
  if (use_hfm) ref = hfm(ref);
  ref = ref_dwconv(ref);

  Tensor deg = deg_conv1(x_lf);
  if (use_hfm) deg = hfm(deg);

  Tensor x_hf = fuse_conv1(concat({ref, deg}, 1));
  Tensor m = hfca(hfca_source == HfcaSource::ProcessedFeature ? x_lf : deg);
  Tensor x_sum = add(mul(x_hf, m), x_lf);
  return out_conv1(x_sum);
}

void Ahfrm::register_params(ParamRegistry& reg, const std::string& prefix) const {
  msgm.register_params(reg, prefix + ".msgm");
  ref_dwconv.register_params(reg, prefix + ".ref_dwconv");
  deg_conv1.register_params(reg, prefix + ".deg_conv1");
  fuse_conv1.register_params(reg, prefix + ".fuse_conv1");
  hfca.register_params(reg, prefix + ".hfca");
  out_conv1.register_params(reg, prefix + ".out_conv1");
}

}  // namespace tpm
