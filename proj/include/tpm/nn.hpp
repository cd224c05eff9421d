#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tpm/rng.hpp"
#include "tpm/tensor.hpp"

namespace tpm {

// Flat name -> tensor table. Registration order is the construction order,
// which also fixes the checkpoint layout and the optimizer's walk.
struct ParamRegistry {
  std::vector<std::pair<std::string, Tensor>> items;

  void add(const std::string& name, const Tensor& t) {
    for (const auto& [n, unused] : items)
      if (n == name) throw std::logic_error("duplicate parameter name: " + name);
    items.emplace_back(name, t);
  }

  std::int64_t total_elements() const {
    std::int64_t n = 0;
    for (const auto& [name, t] : items) n += t.numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : items) t.zero_grad();
  }
};

inline void init_trunc_normal(Tensor& t, Rng& rng, double std_dev) {
  for (auto& v : t.data()) v = rng.trunc_normal(std_dev);
}

// y = x . W (+ b); W stored [in, out] for channels-last activations.
struct Linear {
  Tensor w, b;
  std::int64_t in = 0, out = 0;

  Linear() = default;
  Linear(std::int64_t in_features, std::int64_t out_features, Rng& rng, bool bias = true,
         double weight_gain = 1.0)
      : in(in_features), out(out_features) {
    w = Tensor::zeros({in, out});
    init_trunc_normal(w, rng, weight_gain * std::sqrt(2.0 / static_cast<double>(in)));
    w.set_requires_grad(true);
    if (bias) {
      b = Tensor::zeros({out});
      b.set_requires_grad(true);
    }
  }

  Tensor operator()(const Tensor& x) const {
    Tensor y = matmul(x, w);
    return b.defined() ? add(y, b) : y;
  }

  void register_params(ParamRegistry& reg, const std::string& prefix) const {
    reg.add(prefix + ".w", w);
    if (b.defined()) reg.add(prefix + ".b", b);
  }
};

struct LayerNormParams {
  Tensor gamma, beta;

  LayerNormParams() = default;
  explicit LayerNormParams(std::int64_t channels) {
    gamma = Tensor::full({channels}, 1.0);
    beta = Tensor::zeros({channels});
    gamma.set_requires_grad(true);
    beta.set_requires_grad(true);
  }

  // normalizes the last axis
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

  void register_params(ParamRegistry& reg, const std::string& prefix) const {
    reg.add(prefix + ".gamma", gamma);
    reg.add(prefix + ".beta", beta);
  }
};

struct Conv2dLayer {
  Tensor w, b;
  int stride = 1, padding = 0, groups = 1;

  Conv2dLayer() = default;
  Conv2dLayer(std::int64_t c_in, std::int64_t c_out, int kernel, Rng& rng, int groups_ = 1,
              double weight_gain = 1.0)
      : stride(1), padding(kernel / 2), groups(groups_) {
    const std::int64_t fan_in = (c_in / groups_) * kernel * kernel;
    w = Tensor::zeros({c_out, c_in / groups_, kernel, kernel});
    init_trunc_normal(w, rng, weight_gain * std::sqrt(2.0 / static_cast<double>(fan_in)));
    w.set_requires_grad(true);
    b = Tensor::zeros({c_out});
    b.set_requires_grad(true);
  }

  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, padding, groups); }

  void register_params(ParamRegistry& reg, const std::string& prefix) const {
    reg.add(prefix + ".w", w);
    reg.add(prefix + ".b", b);
  }
};

}  // namespace tpm
