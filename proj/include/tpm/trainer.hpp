#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tpm/data.hpp"
#include "tpm/model.hpp"
#include "tpm/tensor.hpp"

namespace tpm {

struct TrainConfig {
  int batch = 4;
  std::int64_t total_iters = 5000;
  double lr0 = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double eps = 1e-8;
  // fractions of total_iters at which the rate halves; at 600K iterations
  // these land on 300K/450K/525K/575K
  std::vector<double> milestones = {1.0 / 2.0, 3.0 / 4.0, 7.0 / 8.0, 23.0 / 24.0};
  std::uint64_t seed = 0;
  std::int64_t val_every = 500;
  std::int64_t checkpoint_every = 1000;
  int patch = 64;  // LR patch side; the HR crop is patch * scale

  void validate() const;
};

// mean absolute error
Tensor l1_loss(const Tensor& sr, const Tensor& hr);

double lr_schedule(std::int64_t iter, const TrainConfig& cfg);

// Moment buffers aligned with a parameter registry.
struct AdamState {
  std::vector<std::vector<double>> m, v;
  std::int64_t step = 0;

  static AdamState make(const ParamRegistry& reg);
};

// Bias-corrected Adam update from the gradients currently in the registry.
void adam_step(ParamRegistry& reg, AdamState& state, const TrainConfig& cfg, double lr);

struct TrainResult {
  double final_loss = 0.0;
  double best_val_psnr = 0.0;
  std::int64_t iters_run = 0;
  std::string log_text;  // one line per iteration, deterministic
};

// L1/Adam loop with validation and atomic checkpointing. out_dir may be
// empty to skip checkpoints. echo, when set, receives occasional progress.
class Trainer {
 public:
  Trainer(TpmModel& model, TrainConfig cfg, std::vector<ImageRgb> train_hr,
          std::vector<ImageRgb> val_hr);

  // restores optimizer moments, step counter and sampler stream
  void resume(const std::string& state_path);

  TrainResult run(const std::string& out_dir,
                  const std::function<void(const std::string&)>& echo = {});

  void save_state(const std::string& path) const;

 private:
  struct Val {
    double psnr, ssim;
  };
  Val validate() const;

  TpmModel& model_;
  TrainConfig cfg_;
  std::vector<ImageRgb> train_;
  std::vector<ImageRgb> val_;
  AdamState state_;
  Rng sampler_;
  std::int64_t start_iter_ = 0;
  double best_psnr_ = -1.0;
};

}  // namespace tpm
