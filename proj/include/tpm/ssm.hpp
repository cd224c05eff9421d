#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tpm/nn.hpp"
#include "tpm/tensor.hpp"

namespace tpm {

// Exact zero-order-hold discretization of one diagonal entry:
//   a_bar  = exp(delta * a)
//   b_bar  = (exp(delta * a) - 1) / a * B = delta * phi(delta * a) * B
// phi(e) = (exp(e) - 1)/e, continued through e = 0 by its series.
struct ZohStep {
  double a_bar;
  double b_coef;  // multiply by B to get b_bar
};

ZohStep discretize_zoh_step(double a, double delta);

// Per-step discretization of a full sequence: a_diag has n entries,
// b is [len, n], delta is [len]; outputs are [len, n].
struct DiscreteSsm {
  std::vector<double> a_bar;
  std::vector<double> b_bar;
  std::int64_t len = 0;
  std::int64_t n_state = 0;
};

DiscreteSsm discretize_zoh(const std::vector<double>& a_diag, const std::vector<double>& b,
                           const std::vector<double>& delta);

// Fused selective scan over batched sequences.
//   x, delta: [B, L, d]; b_seq, c_seq: [B, L, n]; a_diag: [d, n]; d_skip: [d]
//   h_0 = 0;  h_k = a_bar h_{k-1} + b_bar x_k;  y_k = c_k . h_k + d_skip * x_k
// Differentiable w.r.t. every input (backprop through time).
Tensor selective_scan(const Tensor& x, const Tensor& delta, const Tensor& b_seq,
                      const Tensor& c_seq, const Tensor& a_diag, const Tensor& d_skip);

// Deliberately naive single-sequence recurrence with an explicit state
// vector; the oracle every optimized scan path is checked against.
// x, delta: [len, d]; b, c: [len, n]; a_diag: [d, n]; d_skip: [d].
std::vector<double> selective_scan_reference(const std::vector<double>& x,
                                             const std::vector<double>& delta,
                                             const std::vector<double>& b,
                                             const std::vector<double>& c,
                                             const std::vector<double>& a_diag,
                                             const std::vector<double>& d_skip,
                                             std::int64_t len, std::int64_t d_inner,
                                             std::int64_t n_state);

// One selective-SSM head: diagonal state matrix plus the input-dependent
// projections that produce (B, C, delta) per position.
struct SsmParams {
  Tensor a_log;   // [d, n]; diag(A) = -exp(a_log)
  Tensor d_skip;  // [d]
  Linear b_proj;  // d -> n
  Linear c_proj;  // d -> n
  Linear dt_low;  // d -> rank (low-rank bottleneck)
  Linear dt_up;   // rank -> d, bias seeds softplus(bias) in [1e-3, 1e-1]
  std::int64_t d_inner = 0, n_state = 0, dt_rank = 0;

  SsmParams() = default;
  SsmParams(std::int64_t d, std::int64_t n, Rng& rng);

  struct Selection {
    Tensor b_seq, c_seq, delta;
  };
  // x_seq: [B, L, d] -> shapes [B,L,n], [B,L,n], [B,L,d]; delta > 0
  Selection project_selection(const Tensor& x_seq) const;

  // full head: projections + scan + skip
  Tensor apply(const Tensor& x_seq) const;

  void register_params(ParamRegistry& reg, const std::string& prefix) const;

  static std::int64_t rank_for(std::int64_t d) { return (d + 15) / 16; }
};

}  // namespace tpm
