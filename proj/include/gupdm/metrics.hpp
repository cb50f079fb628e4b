#pragma once

// Reference and no-reference image quality metrics. MSE/PSNR/SSIM follow the
// usual 0-255 conventions; UCIQE and UIQM follow their original definitions
// (chroma/luminance/saturation statistics, and the colorfulness/sharpness/
// contrast triple with asymmetric trimming, Sobel-weighted EME and a
// PLIP-ratio block contrast).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "gupdm/errors.hpp"
#include "gupdm/image.hpp"

namespace gupdm {

constexpr double kPsnrCap = 99.0;

inline double mse(const ImageRgb& a, const ImageRgb& b) {
  if (!same_size(a, b)) throw ShapeError("mse: size mismatch");
  double acc = 0.0;
  for (size_t i = 0; i < a.pix.size(); ++i) {
    const double d = (a.pix[i] - b.pix[i]) * 255.0;
    acc += d * d;
  }
  return acc / static_cast<double>(a.pix.size());
}

inline double psnr(const ImageRgb& a, const ImageRgb& b) {
  const double m = mse(a, b);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / m));
}

namespace detail {

inline std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<size_t>(size) * size);
  const int r = size / 2;
  double total = 0.0;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      const double dy = y - r, dx = x - r;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      w[static_cast<size_t>(y) * size + x] = v;
      total += v;
    }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace detail

// Mean local SSIM, 11x11 Gaussian window (sigma 1.5), valid region, averaged
// over channels. Computed on the 0-255 scale with the standard stabilizers.
inline double ssim(const ImageRgb& a, const ImageRgb& b) {
  if (!same_size(a, b)) throw ShapeError("ssim: size mismatch");
  constexpr int kWin = 11;
  if (a.height < kWin || a.width < kWin)
    throw ShapeError("ssim: image smaller than the 11x11 window");
  static const std::vector<double> win = detail::gaussian_window(kWin, 1.5);
  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  const int oh = a.height - kWin + 1, ow = a.width - kWin + 1;
  const std::int64_t plane = a.plane();
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    const double* pa = a.pix.data() + c * plane;
    const double* pb = b.pix.data() + c * plane;
    double acc = 0.0;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        double mu1 = 0.0, mu2 = 0.0, e11 = 0.0, e22 = 0.0, e12 = 0.0;
        for (int ky = 0; ky < kWin; ++ky)
          for (int kx = 0; kx < kWin; ++kx) {
            const double w = win[static_cast<size_t>(ky) * kWin + kx];
            const double x1 = pa[(oy + ky) * a.width + ox + kx] * 255.0;
            const double x2 = pb[(oy + ky) * a.width + ox + kx] * 255.0;
            mu1 += w * x1;
            mu2 += w * x2;
            e11 += w * (x1 * x1);
            e22 += w * (x2 * x2);
            e12 += w * (x1 * x2);  // symmetric association, keeps ssim(a,b)==ssim(b,a) exact
          }
        const double v1 = e11 - mu1 * mu1;
        const double v2 = e22 - mu2 * mu2;
        const double cov = e12 - mu1 * mu2;
        acc += ((2.0 * (mu1 * mu2) + c1) * (2.0 * cov + c2)) /
               ((mu1 * mu1 + mu2 * mu2 + c1) * (v1 + v2 + c2));
      }
    total += acc / (static_cast<double>(oh) * ow);
  }
  return total / 3.0;
}

// ---------------------------------------------------------------------------
// UCIQE

namespace detail {

// sRGB in [0,1] -> CIELab (D65), L in [0,100].
inline void rgb_to_lab(double r, double g, double b, double& l, double& la, double& lb) {
  auto lin = [](double u) {
    return u <= 0.04045 ? u / 12.92 : std::pow((u + 0.055) / 1.055, 2.4);
  };
  const double rl = lin(r), gl = lin(g), bl = lin(b);
  const double x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl;
  const double y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl;
  const double z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl;
  auto f = [](double t) {
    constexpr double d = 6.0 / 29.0;
    return t > d * d * d ? std::cbrt(t) : t / (3.0 * d * d) + 4.0 / 29.0;
  };
  // white point taken from the matrix row sums so equal r=g=b lands on
  // exactly zero chroma
  constexpr double xn = 0.4124564 + 0.3575761 + 0.1804375;
  constexpr double yn = 0.2126729 + 0.7151522 + 0.0721750;
  constexpr double zn = 0.0193339 + 0.1191920 + 0.9503041;
  const double fx = f(x / xn), fy = f(y / yn), fz = f(z / zn);
  l = 116.0 * fy - 16.0;
  la = 500.0 * (fx - fy);
  lb = 200.0 * (fy - fz);
}

}  // namespace detail

struct UciqeComponents {
  double sigma_chroma = 0.0;
  double con_luma = 0.0;
  double mean_saturation = 0.0;
};

constexpr double kUciqeC1 = 0.4680, kUciqeC2 = 0.2745, kUciqeC3 = 0.2576;

inline UciqeComponents uciqe_components(const ImageRgb& img) {
  const std::int64_t plane = img.plane();
  std::vector<double> luma(static_cast<size_t>(plane));
  std::vector<double> chroma(static_cast<size_t>(plane));
  double sat_acc = 0.0;
  for (std::int64_t i = 0; i < plane; ++i) {
    double l, a, b;
    detail::rgb_to_lab(img.pix[static_cast<size_t>(i)],
                       img.pix[static_cast<size_t>(plane + i)],
                       img.pix[static_cast<size_t>(2 * plane + i)], l, a, b);
    const double c = std::sqrt(a * a + b * b);
    luma[static_cast<size_t>(i)] = l;
    chroma[static_cast<size_t>(i)] = c;
    const double denom = std::sqrt(c * c + l * l);
    sat_acc += denom > 0.0 ? c / denom : 0.0;
  }
  UciqeComponents out;
  double mean_c = 0.0;
  for (double c : chroma) mean_c += c;
  mean_c /= static_cast<double>(plane);
  double var_c = 0.0;
  for (double c : chroma) var_c += (c - mean_c) * (c - mean_c);
  out.sigma_chroma = std::sqrt(var_c / static_cast<double>(plane));

  std::vector<double> sorted = luma;
  std::sort(sorted.begin(), sorted.end());
  const std::int64_t k = std::max<std::int64_t>(1, plane / 100);
  double lo = 0.0, hi = 0.0;
  for (std::int64_t i = 0; i < k; ++i) {
    lo += sorted[static_cast<size_t>(i)];
    hi += sorted[static_cast<size_t>(plane - 1 - i)];
  }
  out.con_luma = (hi - lo) / static_cast<double>(k);
  out.mean_saturation = sat_acc / static_cast<double>(plane);
  return out;
}

inline double uciqe(const ImageRgb& img) {
  const UciqeComponents c = uciqe_components(img);
  return kUciqeC1 * c.sigma_chroma + kUciqeC2 * c.con_luma + kUciqeC3 * c.mean_saturation;
}

// ---------------------------------------------------------------------------
// UIQM

struct UiqmComponents {
  double uicm = 0.0;
  double uism = 0.0;
  double uiconm = 0.0;
};

constexpr double kUiqmC1 = 0.0282, kUiqmC2 = 0.2953, kUiqmC3 = 3.5753;
constexpr int kUiqmBlock = 8;
constexpr double kUicmTrim = 0.1;

namespace detail {

// Asymmetric alpha-trimmed mean plus full-population second moment about it.
inline void trimmed_stats(std::vector<double> v, double alpha, double& mu, double& var) {
  std::sort(v.begin(), v.end());
  const std::int64_t n = static_cast<std::int64_t>(v.size());
  const std::int64_t cut = static_cast<std::int64_t>(alpha * static_cast<double>(n));
  double acc = 0.0;
  std::int64_t cnt = 0;
  for (std::int64_t i = cut; i < n - cut; ++i) {
    acc += v[static_cast<size_t>(i)];
    ++cnt;
  }
  mu = cnt > 0 ? acc / static_cast<double>(cnt) : 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mu) * (x - mu);
  var = s / static_cast<double>(n);
}

// Agaian EME on one plane: (2/blocks) * sum ln(max/min), degenerate blocks skipped.
inline double eme(const std::vector<double>& plane_v, int h, int w, int block) {
  const int bh = h / block, bw = w / block;
  if (bh == 0 || bw == 0) return 0.0;
  double acc = 0.0;
  for (int by = 0; by < bh; ++by)
    for (int bx = 0; bx < bw; ++bx) {
      double mx = 0.0, mn = std::numeric_limits<double>::infinity();
      for (int y = by * block; y < (by + 1) * block; ++y)
        for (int x = bx * block; x < (bx + 1) * block; ++x) {
          const double v = plane_v[static_cast<size_t>(y) * w + x];
          mx = std::max(mx, v);
          mn = std::min(mn, v);
        }
      if (mn > 0.0 && mx > 0.0) acc += std::log(mx / mn);
    }
  return 2.0 / (static_cast<double>(bh) * bw) * acc;
}

inline double plip_sub(double a, double b, double gamma) {
  return gamma * (a - b) / (gamma - b);
}
inline double plip_add(double a, double b, double gamma) { return a + b - a * b / gamma; }

}  // namespace detail

inline UiqmComponents uiqm_components(const ImageRgb& img) {
  const std::int64_t plane = img.plane();
  const int h = img.height, w = img.width;
  UiqmComponents out;

  // colorfulness from RG / YB opponent statistics (0-255 scale)
  {
    std::vector<double> rg(static_cast<size_t>(plane)), yb(static_cast<size_t>(plane));
    for (std::int64_t i = 0; i < plane; ++i) {
      const double r = img.pix[static_cast<size_t>(i)] * 255.0;
      const double g = img.pix[static_cast<size_t>(plane + i)] * 255.0;
      const double b = img.pix[static_cast<size_t>(2 * plane + i)] * 255.0;
      rg[static_cast<size_t>(i)] = r - g;
      yb[static_cast<size_t>(i)] = 0.5 * (r + g) - b;
    }
    double mu_rg, var_rg, mu_yb, var_yb;
    detail::trimmed_stats(std::move(rg), kUicmTrim, mu_rg, var_rg);
    detail::trimmed_stats(std::move(yb), kUicmTrim, mu_yb, var_yb);
    out.uicm = -0.0268 * std::sqrt(mu_rg * mu_rg + mu_yb * mu_yb) +
               0.1586 * std::sqrt(var_rg + var_yb);
  }

  // sharpness: per-channel Sobel magnitude weighting, EME of the product
  {
    const double lum[3] = {0.299, 0.587, 0.114};
    for (int c = 0; c < 3; ++c) {
      const double* p = img.pix.data() + c * plane;
      std::vector<double> edge(static_cast<size_t>(plane), 0.0);
      for (int y = 1; y < h - 1; ++y)
        for (int x = 1; x < w - 1; ++x) {
          auto v = [&](int yy, int xx) { return p[yy * w + xx] * 255.0; };
          const double gx = v(y - 1, x + 1) + 2 * v(y, x + 1) + v(y + 1, x + 1) -
                            v(y - 1, x - 1) - 2 * v(y, x - 1) - v(y + 1, x - 1);
          const double gy = v(y + 1, x - 1) + 2 * v(y + 1, x) + v(y + 1, x + 1) -
                            v(y - 1, x - 1) - 2 * v(y - 1, x) - v(y - 1, x + 1);
          edge[static_cast<size_t>(y) * w + x] = std::sqrt(gx * gx + gy * gy);
        }
      std::vector<double> weighted(static_cast<size_t>(plane));
      for (std::int64_t i = 0; i < plane; ++i)
        weighted[static_cast<size_t>(i)] =
            edge[static_cast<size_t>(i)] * p[i] * 255.0;
      out.uism += lum[c] * detail::eme(weighted, h, w, kUiqmBlock);
    }
  }

  // block contrast: PLIP Michelson ratio entropy on the grayscale intensity
  {
    constexpr double gamma = 1026.0;
    std::vector<double> gray(static_cast<size_t>(plane));
    for (std::int64_t i = 0; i < plane; ++i)
      gray[static_cast<size_t>(i)] = 255.0 / 3.0 *
                                     (img.pix[static_cast<size_t>(i)] +
                                      img.pix[static_cast<size_t>(plane + i)] +
                                      img.pix[static_cast<size_t>(2 * plane + i)]);
    const int bh = h / kUiqmBlock, bw = w / kUiqmBlock;
    double acc = 0.0;
    for (int by = 0; by < bh; ++by)
      for (int bx = 0; bx < bw; ++bx) {
        double mx = 0.0, mn = std::numeric_limits<double>::infinity();
        for (int y = by * kUiqmBlock; y < (by + 1) * kUiqmBlock; ++y)
          for (int x = bx * kUiqmBlock; x < (bx + 1) * kUiqmBlock; ++x) {
            const double v = gray[static_cast<size_t>(y) * w + x];
            mx = std::max(mx, v);
            mn = std::min(mn, v);
          }
        const double top = detail::plip_sub(mx, mn, gamma);
        const double bot = detail::plip_add(mx, mn, gamma);
        if (top > 0.0 && bot > 0.0) {
          const double r = top / bot;
          acc += r * std::log(r);
        }
      }
    out.uiconm = (bh > 0 && bw > 0) ? acc / (static_cast<double>(bh) * bw) : 0.0;
  }
  return out;
}

inline double uiqm(const ImageRgb& img) {
  const UiqmComponents c = uiqm_components(img);
  return kUiqmC1 * c.uicm + kUiqmC2 * c.uism + kUiqmC3 * c.uiconm;
}

// ---------------------------------------------------------------------------
// Batch table output

// One row per image, one column per metric, tab separated.
inline void write_metric_table(std::ostream& os, const std::vector<std::string>& columns,
                               const std::vector<std::string>& row_names,
                               const std::vector<std::vector<double>>& rows) {
  os << "image";
  for (const auto& c : columns) os << '\t' << c;
  os << '\n';
  for (size_t r = 0; r < rows.size(); ++r) {
    os << row_names[r];
    for (double v : rows[r]) os << '\t' << std::setprecision(6) << std::fixed << v;
    os << '\n';
  }
}

}  // namespace gupdm
