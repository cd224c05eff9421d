#include "tpm/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <filesystem>

namespace tpm {

namespace {

struct PngReadGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* file = nullptr;
  ~PngReadGuard() {
    if (png) png_destroy_read_struct(&png, info ? &info : nullptr, nullptr);
    if (file) std::fclose(file);
  }
};

struct PngWriteGuard {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::FILE* file = nullptr;
  ~PngWriteGuard() {
    if (png) png_destroy_write_struct(&png, info ? &info : nullptr);
    if (file) std::fclose(file);
  }
};

}  // namespace

ImageRgb load_png(const std::string& path) {
  PngReadGuard g;
  g.file = std::fopen(path.c_str(), "rb");
  if (!g.file) throw IoError("cannot open " + path);

  unsigned char sig[8];
  if (std::fread(sig, 1, 8, g.file) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError(path + ": not a PNG file");

  g.png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!g.png) throw IoError("libpng: out of memory");
  g.info = png_create_info_struct(g.png);
  if (!g.info) throw IoError("libpng: out of memory");

  // storage declared before the setjmp landing point
  std::vector<unsigned char> raster;
  std::vector<png_bytep> rows;
  ImageRgb img;

  if (setjmp(png_jmpbuf(g.png))) throw IoError(path + ": malformed PNG");

  png_init_io(g.png, g.file);
  png_set_sig_bytes(g.png, 8);
  png_read_info(g.png, g.info);

  const png_uint_32 width = png_get_image_width(g.png, g.info);
  const png_uint_32 height = png_get_image_height(g.png, g.info);
  const int color = png_get_color_type(g.png, g.info);

  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(g.png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(g.png, g.info) < 8)
    png_set_expand_gray_1_2_4_to_8(g.png);
  if (png_get_valid(g.png, g.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(g.png);
  if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA)
    png_set_gray_to_rgb(g.png);
  png_set_strip_alpha(g.png);
  png_read_update_info(g.png, g.info);

  const int depth = png_get_bit_depth(g.png, g.info);
  if (depth != 8 && depth != 16) throw IoError(path + ": unsupported bit depth");
  const std::size_t stride = png_get_rowbytes(g.png, g.info);
  raster.resize(stride * height);
  rows.resize(height);
  for (png_uint_32 y = 0; y < height; ++y) rows[y] = raster.data() + y * stride;
  png_read_image(g.png, rows.data());
  png_read_end(g.png, nullptr);

  img = ImageRgb(static_cast<int>(width), static_cast<int>(height));
  const double norm = depth == 8 ? 1.0 / 255.0 : 1.0 / 65535.0;
  for (png_uint_32 y = 0; y < height; ++y) {
    const unsigned char* row = raster.data() + y * stride;
    for (png_uint_32 x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) {
        double v;
        if (depth == 8) {
          v = row[3 * x + c] * norm;
        } else {
          // PNG stores 16-bit samples big-endian
          const unsigned hi = row[6 * x + 2 * c];
          const unsigned lo = row[6 * x + 2 * c + 1];
          v = static_cast<double>((hi << 8) | lo) * norm;
        }
        img.at(c, static_cast<int>(y), static_cast<int>(x)) = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

void save_png(const ImageRgb& img, const std::string& path) {
  PngWriteGuard g;
  g.file = std::fopen(path.c_str(), "wb");
  if (!g.file) throw IoError("cannot write " + path);
  g.png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!g.png) throw IoError("libpng: out of memory");
  g.info = png_create_info_struct(g.png);
  if (!g.info) throw IoError("libpng: out of memory");

  std::vector<unsigned char> raster(static_cast<std::size_t>(3) * img.width * img.height);
  std::vector<png_bytep> rows(img.height);

  if (setjmp(png_jmpbuf(g.png))) throw IoError(path + ": PNG write failed");

  png_init_io(g.png, g.file);
  png_set_IHDR(g.png, g.info, img.width, img.height, 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);

  for (int y = 0; y < img.height; ++y) {
    unsigned char* row = raster.data() + static_cast<std::size_t>(3) * img.width * y;
    for (int x = 0; x < img.width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(img.at(c, y, x), 0.0, 1.0);
        row[3 * x + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    rows[y] = row;
  }
  png_set_rows(g.png, g.info, rows.data());
  png_write_png(g.png, g.info, PNG_TRANSFORM_IDENTITY, nullptr);
}

namespace {

// Catmull-Rom style cubic, a = -0.5
double cubic_kernel(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

struct ResamplePlan {
  // per output position: first tap and normalized weights
  std::vector<int> first;
  std::vector<std::vector<double>> weights;
};

ResamplePlan plan_axis(int in, int out) {
  ResamplePlan plan;
  plan.first.resize(out);
  plan.weights.resize(out);
  const double ratio = static_cast<double>(in) / out;
  // shrinkage widens the kernel (antialias); enlargement keeps unit width
  const double kscale = out < in ? static_cast<double>(out) / in : 1.0;
  const double support = 2.0 / kscale;
  for (int j = 0; j < out; ++j) {
    const double center = (j + 0.5) * ratio - 0.5;
    const int lo = static_cast<int>(std::ceil(center - support));
    const int hi = static_cast<int>(std::floor(center + support));
    std::vector<double> w;
    w.reserve(hi - lo + 1);
    double total = 0.0;
    for (int t = lo; t <= hi; ++t) {
      const double wt = cubic_kernel((t - center) * kscale);
      w.push_back(wt);
      total += wt;
    }
    for (auto& wt : w) wt /= total;
    plan.first[j] = lo;
    plan.weights[j] = std::move(w);
  }
  return plan;
}

}  // namespace

ImageRgb bicubic_resize(const ImageRgb& img, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) throw std::invalid_argument("bicubic_resize: empty output");
  if (out_h == img.height && out_w == img.width) return img;

  const ResamplePlan px = plan_axis(img.width, out_w);
  const ResamplePlan py = plan_axis(img.height, out_h);

  // horizontal pass
  ImageRgb mid(out_w, img.height);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < out_w; ++x) {
        const auto& w = px.weights[x];
        double acc = 0.0;
        for (std::size_t t = 0; t < w.size(); ++t) {
          const int sx = std::clamp(px.first[x] + static_cast<int>(t), 0, img.width - 1);
          acc += w[t] * img.at(c, y, sx);
        }
        mid.at(c, y, x) = acc;
      }
  // vertical pass
  ImageRgb out(out_w, out_h);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < out_h; ++y) {
      const auto& w = py.weights[y];
      for (int x = 0; x < out_w; ++x) {
        double acc = 0.0;
        for (std::size_t t = 0; t < w.size(); ++t) {
          const int sy = std::clamp(py.first[y] + static_cast<int>(t), 0, img.height - 1);
          acc += w[t] * mid.at(c, sy, x);
        }
        out.at(c, y, x) = acc;
      }
    }
  return out;
}

std::vector<double> rgb_to_ycbcr_y(const ImageRgb& img) {
  std::vector<double> y(static_cast<std::size_t>(img.width) * img.height);
  const std::size_t n = y.size();
  for (std::size_t i = 0; i < n; ++i) {
    const double r = img.pix[i];
    const double g = img.pix[n + i];
    const double b = img.pix[2 * n + i];
    y[i] = (16.0 + 65.481 * r + 128.553 * g + 24.966 * b) / 255.0;
  }
  return y;
}

ImageRgb crop_image(const ImageRgb& img, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || y0 + h > img.height || x0 + w > img.width)
    throw std::invalid_argument("crop_image: region out of bounds");
  ImageRgb out(w, h);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

namespace {
ImageRgb rot90_cw(const ImageRgb& img) {
  ImageRgb out(img.height, img.width);  // width/height swap
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x) out.at(c, y, x) = img.at(c, img.height - 1 - x, y);
  return out;
}

ImageRgb flip_h(const ImageRgb& img) {
  ImageRgb out(img.width, img.height);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) out.at(c, y, x) = img.at(c, y, img.width - 1 - x);
  return out;
}
}  // namespace

ImageRgb dihedral_transform(const ImageRgb& img, int k) {
  if (k < 0 || k > 7) throw std::invalid_argument("dihedral_transform: k must be in [0,8)");
  ImageRgb out = img;
  for (int i = 0; i < k % 4; ++i) out = rot90_cw(out);
  if (k >= 4) out = flip_h(out);
  return out;
}

int dihedral_inverse(int k) {
  // rotations invert to the complementary rotation; flips are involutions
  // composed with a rotation of the same handedness
  static const int inv[8] = {0, 3, 2, 1, 4, 5, 6, 7};
  if (k < 0 || k > 7) throw std::invalid_argument("dihedral_inverse: k must be in [0,8)");
  return inv[k];
}

PairedSample sample_patch(const ImageRgb& hr_img, int scale, int patch, Rng& rng,
                          const std::string& source) {
  const int hr_side = patch * scale;
  if (hr_img.width < hr_side || hr_img.height < hr_side)
    throw IoError("sample_patch: image " + std::to_string(hr_img.width) + "x" +
                  std::to_string(hr_img.height) + " smaller than HR crop " +
                  std::to_string(hr_side));
  PairedSample s;
  s.scale = scale;
  s.source = source;
  s.x0 = static_cast<int>(rng.below(hr_img.width - hr_side + 1));
  s.y0 = static_cast<int>(rng.below(hr_img.height - hr_side + 1));
  s.hr = crop_image(hr_img, s.y0, s.x0, hr_side, hr_side);
  s.lr = bicubic_resize(s.hr, patch, patch);
  return s;
}

void augment(PairedSample& sample, Rng& rng) {
  const int k = static_cast<int>(rng.below(8));
  sample.aug = k;
  if (k == 0) return;
  sample.hr = dihedral_transform(sample.hr, k);
  // regenerate instead of transforming lr so the pairing invariant stays
  // exact; the two differ only by summation order (< 1e-12)
  sample.lr = bicubic_resize(sample.hr, sample.hr.height / sample.scale,
                             sample.hr.width / sample.scale);
}

Tensor image_to_tensor(const ImageRgb& img) {
  return Tensor::from_data({1, 3, img.height, img.width}, img.pix);
}

Tensor images_to_batch(const std::vector<ImageRgb>& imgs) {
  if (imgs.empty()) throw std::invalid_argument("images_to_batch: empty batch");
  const int h = imgs[0].height, w = imgs[0].width;
  std::vector<double> data;
  data.reserve(imgs.size() * imgs[0].pix.size());
  for (const auto& img : imgs) {
    if (img.height != h || img.width != w)
      throw std::invalid_argument("images_to_batch: mixed extents");
    data.insert(data.end(), img.pix.begin(), img.pix.end());
  }
  return Tensor::from_data({static_cast<std::int64_t>(imgs.size()), 3, h, w}, std::move(data));
}

ImageRgb tensor_to_image(const Tensor& t, std::int64_t batch_index) {
  const auto& s = t.shape();
  if (s.size() != 4 || s[1] != 3)
    throw std::invalid_argument("tensor_to_image: expected [B,3,H,W], got " + shape_str(s));
  const int h = static_cast<int>(s[2]), w = static_cast<int>(s[3]);
  ImageRgb img(w, h);
  const double* p = t.data().data() + batch_index * 3 * h * w;
  for (std::size_t i = 0; i < img.pix.size(); ++i) img.pix[i] = std::clamp(p[i], 0.0, 1.0);
  return img;
}

std::vector<std::string> list_hr_files(const std::string& root) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::path(root) / "HR";
  if (!fs::is_directory(dir)) throw IoError("no HR directory under " + root);
  std::vector<std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    auto ext = e.path().extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
    if (ext == ".png") files.push_back(e.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw IoError("no PNG files in " + dir.string());
  return files;
}

}  // namespace tpm
