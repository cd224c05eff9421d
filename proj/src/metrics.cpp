#include "tpm/metrics.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace tpm {

namespace {

constexpr int kWin = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;  // (K1 * L)^2, L = 1
constexpr double kC2 = 0.03 * 0.03;

void check_pair(const ImageRgb& sr, const ImageRgb& hr, int shave, const char* op) {
  if (sr.width != hr.width || sr.height != hr.height)
    throw std::invalid_argument(std::string(op) + ": extents differ, " +
                                std::to_string(sr.width) + "x" + std::to_string(sr.height) +
                                " vs " + std::to_string(hr.width) + "x" +
                                std::to_string(hr.height));
  if (shave < 0 || 2 * shave >= std::min(sr.width, sr.height))
    throw std::invalid_argument(std::string(op) + ": shave " + std::to_string(shave) +
                                " leaves no pixels");
}

const std::vector<double>& gauss_kernel() {
  static const std::vector<double> k = [] {
    std::vector<double> v(kWin);
    double total = 0.0;
    for (int i = 0; i < kWin; ++i) {
      const double d = i - (kWin - 1) / 2.0;
      v[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
      total += v[i];
    }
    for (auto& x : v) x /= total;
    return v;
  }();
  return k;
}

}  // namespace

double psnr_y(const ImageRgb& sr, const ImageRgb& hr, int shave) {
  check_pair(sr, hr, shave, "psnr_y");
  const auto ys = rgb_to_ycbcr_y(sr);
  const auto yh = rgb_to_ycbcr_y(hr);
  const int w = sr.width, h = sr.height;
  double mse = 0.0;
  std::int64_t n = 0;
  for (int y = shave; y < h - shave; ++y)
    for (int x = shave; x < w - shave; ++x) {
      const double d = ys[static_cast<std::size_t>(y) * w + x] -
                       yh[static_cast<std::size_t>(y) * w + x];
      mse += d * d;
      ++n;
    }
  mse /= static_cast<double>(n);
  if (mse <= 0.0) return 100.0;
  const double db = 10.0 * std::log10(1.0 / mse);
  return db > 100.0 ? 100.0 : db;
}

double ssim_y(const ImageRgb& sr, const ImageRgb& hr, int shave) {
  check_pair(sr, hr, shave, "ssim_y");
  const int w = sr.width - 2 * shave, h = sr.height - 2 * shave;
  if (w < kWin || h < kWin)
    throw std::invalid_argument("ssim_y: shaved image smaller than the 11x11 window");

  const auto ys_full = rgb_to_ycbcr_y(sr);
  const auto yh_full = rgb_to_ycbcr_y(hr);
  auto shaved = [&](const std::vector<double>& src) {
    std::vector<double> out(static_cast<std::size_t>(w) * h);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        out[static_cast<std::size_t>(y) * w + x] =
            src[static_cast<std::size_t>(y + shave) * sr.width + (x + shave)];
    return out;
  };
  const auto a = shaved(ys_full);
  const auto b = shaved(yh_full);

  // separable Gaussian filtering of the five moment maps
  const auto& k = gauss_kernel();
  auto blur = [&](const std::vector<double>& src) {
    std::vector<double> tmp(static_cast<std::size_t>(w) * h, 0.0);
    std::vector<double> out;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x <= w - kWin; ++x) {
        double acc = 0.0;
        for (int t = 0; t < kWin; ++t) acc += k[t] * src[static_cast<std::size_t>(y) * w + x + t];
        tmp[static_cast<std::size_t>(y) * w + x] = acc;
      }
    out.assign(static_cast<std::size_t>(w) * h, 0.0);
    for (int y = 0; y <= h - kWin; ++y)
      for (int x = 0; x <= w - kWin; ++x) {
        double acc = 0.0;
        for (int t = 0; t < kWin; ++t) acc += k[t] * tmp[static_cast<std::size_t>(y + t) * w + x];
        out[static_cast<std::size_t>(y) * w + x] = acc;
      }
    return out;
  };

  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  const auto mu_a = blur(a);
  const auto mu_b = blur(b);
  const auto m_aa = blur(aa);
  const auto m_bb = blur(bb);
  const auto m_ab = blur(ab);

  double total = 0.0;
  std::int64_t count = 0;
  for (int y = 0; y <= h - kWin; ++y)
    for (int x = 0; x <= w - kWin; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      const double ma = mu_a[i], mb = mu_b[i];
      const double va = m_aa[i] - ma * ma;
      const double vb = m_bb[i] - mb * mb;
      const double cov = m_ab[i] - ma * mb;
      const double num = (2.0 * ma * mb + kC1) * (2.0 * cov + kC2);
      const double den = (ma * ma + mb * mb + kC1) * (va + vb + kC2);
      total += num / den;
      ++count;
    }
  return total / static_cast<double>(count);
}

double MetricReport::mean_psnr() const {
  double s = 0.0;
  for (double v : psnr) s += v;
  return psnr.empty() ? 0.0 : s / static_cast<double>(psnr.size());
}

double MetricReport::mean_ssim() const {
  double s = 0.0;
  for (double v : ssim) s += v;
  return ssim.empty() ? 0.0 : s / static_cast<double>(ssim.size());
}

void MetricReport::add(const std::string& name, double p, double s) {
  names.push_back(name);
  psnr.push_back(p);
  ssim.push_back(s);
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "image                          psnr(dB)    ssim\n";
  for (std::size_t i = 0; i < names.size(); ++i) {
    std::string name = names[i];
    if (name.size() > 28) name = "..." + name.substr(name.size() - 25);
    os << name;
    for (std::size_t p = name.size(); p < 30; ++p) os << ' ';
    os << ' ' << psnr[i] << "   " << ssim[i] << '\n';
  }
  os << "mean";
  for (int p = 4; p < 30; ++p) os << ' ';
  os << ' ' << mean_psnr() << "   " << mean_ssim() << '\n';
  return os.str();
}

std::string MetricReport::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "image,psnr,ssim\n";
  for (std::size_t i = 0; i < names.size(); ++i)
    os << names[i] << ',' << psnr[i] << ',' << ssim[i] << '\n';
  os << "mean," << mean_psnr() << ',' << mean_ssim() << '\n';
  return os.str();
}

}  // namespace tpm
