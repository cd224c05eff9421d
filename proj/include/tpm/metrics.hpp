#pragma once

#include <string>
#include <vector>

#include "tpm/data.hpp"

namespace tpm {

// PSNR on the BT.601 Y channel after shaving `shave` pixels per border.
// Identical crops report the 100 dB cap.
double psnr_y(const ImageRgb& sr, const ImageRgb& hr, int shave);

// SSIM on Y: 11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03, L = 1,
// averaged over fully interior windows of the shaved region.
double ssim_y(const ImageRgb& sr, const ImageRgb& hr, int shave);

struct MetricReport {
  std::vector<std::string> names;
  std::vector<double> psnr, ssim;
  int shave = 0;
  int scale = 0;

  double mean_psnr() const;
  double mean_ssim() const;
  void add(const std::string& name, double p, double s);

  std::string to_table() const;
  std::string to_csv() const;
};

}  // namespace tpm
