#include "tpm/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "tpm/metrics.hpp"

namespace tpm {

void TrainConfig::validate() const {
  if (batch < 1) throw std::invalid_argument("train config: batch must be >= 1");
  if (total_iters < 0) throw std::invalid_argument("train config: negative iteration count");
  if (patch < 8) throw std::invalid_argument("train config: patch too small");
  double prev = 0.0;
  for (double m : milestones) {
    if (m <= prev || m >= 1.0)
      throw std::invalid_argument("train config: milestones must increase strictly in (0,1)");
    prev = m;
  }
}

Tensor l1_loss(const Tensor& sr, const Tensor& hr) {
  if (sr.shape() != hr.shape())
    throw std::invalid_argument("l1_loss: shapes differ, " + shape_str(sr.shape()) + " vs " +
                                shape_str(hr.shape()));
  return mean_all(abs_of(sub(sr, hr)));
}

double lr_schedule(std::int64_t iter, const TrainConfig& cfg) {
  double lr = cfg.lr0;
  for (double frac : cfg.milestones) {
    const auto at = static_cast<std::int64_t>(std::floor(frac * static_cast<double>(cfg.total_iters)));
    if (iter >= at) lr *= 0.5;
  }
  return lr;
}

AdamState AdamState::make(const ParamRegistry& reg) {
  AdamState s;
  s.m.reserve(reg.items.size());
  s.v.reserve(reg.items.size());
  for (const auto& [name, t] : reg.items) {
    s.m.emplace_back(t.numel(), 0.0);
    s.v.emplace_back(t.numel(), 0.0);
  }
  return s;
}

void adam_step(ParamRegistry& reg, AdamState& state, const TrainConfig& cfg, double lr) {
  if (state.m.size() != reg.items.size())
    throw std::logic_error("adam_step: state does not match registry");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < reg.items.size(); ++i) {
    Tensor& t = reg.items[i].second;
    const auto& g = t.grad();
    if (g.empty()) continue;  // parameter untouched by this graph
    auto& m = state.m[i];
    auto& v = state.v[i];
    auto& p = t.data();
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

Trainer::Trainer(TpmModel& model, TrainConfig cfg, std::vector<ImageRgb> train_hr,
                 std::vector<ImageRgb> val_hr)
    : model_(model),
      cfg_(std::move(cfg)),
      train_(std::move(train_hr)),
      val_(std::move(val_hr)),
      state_(AdamState::make(model.params())),
      sampler_(cfg_.seed) {
  cfg_.validate();
  if (train_.empty()) throw IoError("trainer: empty training set");
}

namespace {

double bits_to_double(std::uint64_t u) {
  double d;
  std::memcpy(&d, &u, sizeof(d));
  return d;
}

std::uint64_t double_to_bits(double d) {
  std::uint64_t u;
  std::memcpy(&u, &d, sizeof(u));
  return u;
}

}  // namespace

void Trainer::save_state(const std::string& path) const {
  TensorStore store;
  store.config_text = "trainer_state=1\n";
  const auto& reg = model_.params();
  for (std::size_t i = 0; i < reg.items.size(); ++i) {
    store.entries.emplace_back("adam.m." + reg.items[i].first,
                               Tensor::from_data(reg.items[i].second.shape(), state_.m[i]));
    store.entries.emplace_back("adam.v." + reg.items[i].first,
                               Tensor::from_data(reg.items[i].second.shape(), state_.v[i]));
  }
  store.entries.emplace_back("trainer.step",
                             Tensor::scalar(static_cast<double>(state_.step)));
  // SplitMix state preserved bit-for-bit inside a double
  store.entries.emplace_back("trainer.rng", Tensor::scalar(bits_to_double(sampler_.state())));
  store.entries.emplace_back("trainer.best_psnr", Tensor::scalar(best_psnr_));
  store.save(path);
}

void Trainer::resume(const std::string& state_path) {
  TensorStore store = TensorStore::load_file(state_path);
  const auto& reg = model_.params();
  std::size_t at = 0;
  auto next = [&](const std::string& name) -> const Tensor& {
    if (at >= store.entries.size())
      throw IoError(state_path + ": missing entry '" + name + "'");
    const auto& e = store.entries[at++];
    if (e.first != name) throw IoError(state_path + ": expected '" + name + "', found '" + e.first + "'");
    return e.second;
  };
  for (std::size_t i = 0; i < reg.items.size(); ++i) {
    const Tensor& m = next("adam.m." + reg.items[i].first);
    const Tensor& v = next("adam.v." + reg.items[i].first);
    if (m.numel() != static_cast<std::int64_t>(state_.m[i].size()))
      throw IoError(state_path + ": moment size mismatch for " + reg.items[i].first);
    state_.m[i] = m.data();
    state_.v[i] = v.data();
  }
  state_.step = static_cast<std::int64_t>(next("trainer.step").item());
  sampler_.set_state(double_to_bits(next("trainer.rng").item()));
  best_psnr_ = next("trainer.best_psnr").item();
  start_iter_ = state_.step;
}

Trainer::Val Trainer::validate() const {
  NoGradGuard ng;
  const int r = model_.config().scale;
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (const auto& hr_full : val_) {
    // crop to a scale multiple so degradation and SR extents agree
    const int h = hr_full.height - hr_full.height % r;
    const int w = hr_full.width - hr_full.width % r;
    const ImageRgb hr = (h == hr_full.height && w == hr_full.width)
                            ? hr_full
                            : crop_image(hr_full, 0, 0, h, w);
    const ImageRgb lr = bicubic_resize(hr, h / r, w / r);
    const Tensor sr_t = model_.forward(image_to_tensor(lr));
    const ImageRgb sr = tensor_to_image(sr_t);
    psnr_sum += psnr_y(sr, hr, r);
    ssim_sum += ssim_y(sr, hr, r);
  }
  const double n = static_cast<double>(val_.size());
  return {psnr_sum / n, ssim_sum / n};
}

TrainResult Trainer::run(const std::string& out_dir,
                         const std::function<void(const std::string&)>& echo) {
  namespace fs = std::filesystem;
  if (!out_dir.empty()) fs::create_directories(out_dir);

  TrainResult result;
  std::ostringstream log;
  log.precision(17);

  auto emit_val = [&](std::int64_t iter) {
    if (val_.empty()) return;
    const Val v = validate();
    log << "iter=" << iter << " val_psnr=" << v.psnr << " val_ssim=" << v.ssim << '\n';
    if (echo) {
      std::ostringstream os;
      os.precision(6);
      os << "iter " << iter << ": val psnr " << v.psnr << " dB, ssim " << v.ssim;
      echo(os.str());
    }
    if (v.psnr > best_psnr_) {
      best_psnr_ = v.psnr;
      if (!out_dir.empty()) model_.save((fs::path(out_dir) / "best.tpmb").string());
    }
    result.best_val_psnr = best_psnr_;
  };

  if (start_iter_ == 0) emit_val(0);

  auto& reg = model_.params();
  for (std::int64_t iter = start_iter_; iter < cfg_.total_iters; ++iter) {
    // assemble the batch from the seeded stream
    std::vector<ImageRgb> lrs, hrs;
    lrs.reserve(cfg_.batch);
    hrs.reserve(cfg_.batch);
    for (int b = 0; b < cfg_.batch; ++b) {
      const std::size_t img = static_cast<std::size_t>(sampler_.below(train_.size()));
      PairedSample s = sample_patch(train_[img], model_.config().scale, cfg_.patch, sampler_);
      augment(s, sampler_);
      lrs.push_back(std::move(s.lr));
      hrs.push_back(std::move(s.hr));
    }
    const Tensor lr_batch = images_to_batch(lrs);
    const Tensor hr_batch = images_to_batch(hrs);

    const double lr_now = lr_schedule(iter, cfg_);
    reg.zero_grad();
    Tensor loss = l1_loss(model_.forward(lr_batch), hr_batch);
    backward(loss);
    adam_step(reg, state_, cfg_, lr_now);

    result.final_loss = loss.item();
    result.iters_run = iter + 1;
    log << "iter=" << (iter + 1) << " loss=" << loss.item() << " lr=" << lr_now << '\n';
    if (echo && ((iter + 1) % 100 == 0 || iter + 1 == cfg_.total_iters)) {
      std::ostringstream os;
      os.precision(6);
      os << "iter " << (iter + 1) << "/" << cfg_.total_iters << ": loss " << loss.item()
         << ", lr " << lr_now;
      echo(os.str());
    }

    const std::int64_t done = iter + 1;
    if (cfg_.val_every > 0 && done % cfg_.val_every == 0) emit_val(done);
    if (!out_dir.empty() && cfg_.checkpoint_every > 0 && done % cfg_.checkpoint_every == 0) {
      char name[64];
      std::snprintf(name, sizeof(name), "ckpt_%06lld.tpmb", static_cast<long long>(done));
      model_.save((fs::path(out_dir) / name).string());
      save_state((fs::path(out_dir) / (std::string(name) + ".state")).string());
    }
  }
  if (cfg_.val_every > 0 && cfg_.total_iters % cfg_.val_every != 0)
    emit_val(cfg_.total_iters);

  result.log_text = log.str();
  if (!out_dir.empty()) {
    std::ofstream f(fs::path(out_dir) / "train_log.txt");
    f << result.log_text;
  }
  return result;
}

}  // namespace tpm
