#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tpm/errors.hpp"
#include "tpm/rng.hpp"
#include "tpm/tensor.hpp"

namespace tpm {

// Planar RGB, values in [0,1]: pix[c*h*w + y*w + x].
struct ImageRgb {
  int width = 0;
  int height = 0;
  std::vector<double> pix;

  ImageRgb() = default;
  ImageRgb(int w, int h) : width(w), height(h), pix(static_cast<std::size_t>(3) * w * h, 0.0) {}

  double& at(int c, int y, int x) {
    return pix[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
  double at(int c, int y, int x) const {
    return pix[(static_cast<std::size_t>(c) * height + y) * width + x];
  }
};

// 8/16-bit PNG; grayscale and palette images are promoted to RGB, alpha is
// dropped. Throws IoError on malformed files.
ImageRgb load_png(const std::string& path);
// 8-bit RGB output; values are clamped to [0,1] and rounded.
void save_png(const ImageRgb& img, const std::string& path);

// Separable cubic resampling, a = -0.5, antialiased when shrinking (kernel
// widened by the scale factor) with per-position weight normalization.
ImageRgb bicubic_resize(const ImageRgb& img, int out_h, int out_w);

// Studio-swing BT.601 luma in [16/255, 235/255]; one value per pixel.
std::vector<double> rgb_to_ycbcr_y(const ImageRgb& img);

ImageRgb crop_image(const ImageRgb& img, int y0, int x0, int h, int w);

// The 8 square symmetries: k%4 clockwise quarter-turns, then a horizontal
// flip when k >= 4. k = 0 is the identity.
ImageRgb dihedral_transform(const ImageRgb& img, int k);
int dihedral_inverse(int k);

struct PairedSample {
  ImageRgb hr;  // patch*scale square
  ImageRgb lr;  // patch square; always bicubic_resize(hr) at this scale
  int scale = 2;
  std::string source;
  int x0 = 0, y0 = 0;  // HR crop offset
  int aug = 0;         // dihedral element applied
};

// Uniform HR crop of (patch*scale)^2 degraded to a patch^2 LR.
PairedSample sample_patch(const ImageRgb& hr_img, int scale, int patch, Rng& rng,
                          const std::string& source = "");

// Applies a random dihedral element to the HR patch and regenerates the LR
// patch from it, preserving the lr == degrade(hr) invariant exactly.
void augment(PairedSample& sample, Rng& rng);

// tensor bridges
Tensor image_to_tensor(const ImageRgb& img);                       // [1,3,H,W]
Tensor images_to_batch(const std::vector<ImageRgb>& imgs);         // [B,3,H,W]
ImageRgb tensor_to_image(const Tensor& t, std::int64_t batch_index = 0);  // clamps

// All PNGs under <root>/HR, sorted by filename. Throws IoError when empty.
std::vector<std::string> list_hr_files(const std::string& root);

}  // namespace tpm
