#pragma once

// Underwater image formation model, its inversion, prior estimation and the
// two re-degradation generators.
//
// Formation model, per channel:  I(x) = J(x)*T(x) + (1 - T(x)) * A

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <utility>
#include <vector>

#include "gupdm/errors.hpp"
#include "gupdm/image.hpp"
#include "gupdm/rng.hpp"

namespace gupdm {

constexpr double kTransmissionFloor = 0.05;
constexpr double kLambdaLo = 0.3, kLambdaHi = 0.6;
constexpr double kGammaLo = 0.5, kGammaHi = 1.1;

// UDCP patch width: 7 keeps the window meaningful on small fixtures.
inline int default_udcp_patch(int height, int width) {
  return std::min(height, width) <= 64 ? 7 : 15;
}

namespace detail {
inline void require_transmission_valid(const TransmissionMap& t) {
  for (double v : t.planes)
    if (!(v > 0.0) || v > 1.0 || !std::isfinite(v))
      throw ContractError("transmission values must lie in (0,1]");
}
}  // namespace detail

inline ImageRgb synthesize(const ImageRgb& clean, const AtmosphereLight& atmos,
                           const TransmissionMap& trans) {
  if (!same_size(clean, trans)) throw ShapeError("synthesize: image/map size mismatch");
  detail::require_transmission_valid(trans);
  ImageRgb out(clean.height, clean.width);
  const std::int64_t plane = clean.plane();
  for (int c = 0; c < 3; ++c) {
    const double a = atmos.rgb[static_cast<size_t>(c)];
    const double* j = clean.pix.data() + c * plane;
    const double* t = trans.planes.data() + c * plane;
    double* o = out.pix.data() + c * plane;
    for (std::int64_t i = 0; i < plane; ++i) o[i] = j[i] * t[i] + (1.0 - t[i]) * a;
  }
  clip01_inplace(out.pix);
  return out;
}

inline ImageRgb invert(const ImageRgb& observed, const AtmosphereLight& atmos,
                       const TransmissionMap& trans, double t_floor = kTransmissionFloor) {
  if (!same_size(observed, trans)) throw ShapeError("invert: image/map size mismatch");
  if (!(t_floor > 0.0)) throw ContractError("invert: t_floor must be positive");
  ImageRgb out(observed.height, observed.width);
  const std::int64_t plane = observed.plane();
  for (int c = 0; c < 3; ++c) {
    const double a = atmos.rgb[static_cast<size_t>(c)];
    const double* i = observed.pix.data() + c * plane;
    const double* t = trans.planes.data() + c * plane;
    double* o = out.pix.data() + c * plane;
    for (std::int64_t k = 0; k < plane; ++k)
      o[k] = (i[k] - (1.0 - t[k]) * a) / std::max(t[k], t_floor);
  }
  clip01_inplace(out.pix);
  return out;
}

// ---------------------------------------------------------------------------
// Re-degradation generators

// A^m = lambda .* A with per-channel lambda drawn from (lo,hi).
inline std::vector<std::pair<AtmosphereLight, std::array<double, 3>>> vary_atmosphere(
    const AtmosphereLight& atmos, int m_count, Rng& rng, double lo = kLambdaLo,
    double hi = kLambdaHi) {
  if (m_count < 1) throw ConfigError("vary_atmosphere: m_count must be >= 1");
  std::vector<std::pair<AtmosphereLight, std::array<double, 3>>> out;
  out.reserve(static_cast<size_t>(m_count));
  for (int m = 0; m < m_count; ++m) {
    std::array<double, 3> lambda{};
    AtmosphereLight varied;
    for (int c = 0; c < 3; ++c) {
      lambda[static_cast<size_t>(c)] = rng.uniform_open(lo, hi);
      varied.rgb[static_cast<size_t>(c)] = std::clamp(
          lambda[static_cast<size_t>(c)] * atmos.rgb[static_cast<size_t>(c)], 0.0, 1.0);
    }
    out.emplace_back(varied, lambda);
  }
  return out;
}

// T^n = gamma .* T with per-channel gamma drawn from (lo,hi); clipped to (0,1].
inline std::vector<std::pair<TransmissionMap, std::array<double, 3>>> vary_transmission(
    const TransmissionMap& trans, int n_count, Rng& rng, double lo = kGammaLo,
    double hi = kGammaHi) {
  if (n_count < 1) throw ConfigError("vary_transmission: n_count must be >= 1");
  std::vector<std::pair<TransmissionMap, std::array<double, 3>>> out;
  out.reserve(static_cast<size_t>(n_count));
  const std::int64_t plane = trans.plane();
  for (int n = 0; n < n_count; ++n) {
    std::array<double, 3> gamma{};
    TransmissionMap varied(trans.height, trans.width);
    for (int c = 0; c < 3; ++c) {
      gamma[static_cast<size_t>(c)] = rng.uniform_open(lo, hi);
      const double g = gamma[static_cast<size_t>(c)];
      const double* src = trans.planes.data() + c * plane;
      double* dst = varied.planes.data() + c * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = std::min(g * src[i], 1.0);
    }
    out.emplace_back(std::move(varied), gamma);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Prior estimation

// Dark-channel transmission estimate over the green/blue channels:
//   dark(x) = min over patch of min(G/A_g, B/A_b),  T = clamp(1-dark, floor, 1)
// replicated to all three channels. The red channel never participates.
inline TransmissionMap estimate_transmission_udcp(const ImageRgb& observed, int patch,
                                                  const AtmosphereLight& atmos,
                                                  double t_floor = kTransmissionFloor) {
  if (patch < 1 || patch % 2 == 0)
    throw ContractError("estimate_transmission_udcp: patch must be odd and >= 1");
  if (atmos.g() <= 0.0 || atmos.b() <= 0.0)
    throw ContractError("estimate_transmission_udcp: atmosphere green/blue must be positive");
  const int h = observed.height, w = observed.width;
  const std::int64_t plane = observed.plane();
  std::vector<double> ratio(static_cast<size_t>(plane));
  const double* gp = observed.pix.data() + plane;
  const double* bp = observed.pix.data() + 2 * plane;
  const double inv_g = 1.0 / atmos.g(), inv_b = 1.0 / atmos.b();
  for (std::int64_t i = 0; i < plane; ++i)
    ratio[static_cast<size_t>(i)] = std::min(gp[i] * inv_g, bp[i] * inv_b);

  // separable min filter, window clamped at the borders
  const int r = (patch - 1) / 2;
  std::vector<double> rowmin(static_cast<size_t>(plane));
  for (int y = 0; y < h; ++y) {
    const double* row = ratio.data() + static_cast<std::int64_t>(y) * w;
    double* dst = rowmin.data() + static_cast<std::int64_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      const int x0 = std::max(0, x - r), x1 = std::min(w - 1, x + r);
      double m = row[x0];
      for (int k = x0 + 1; k <= x1; ++k) m = std::min(m, row[k]);
      dst[x] = m;
    }
  }
  TransmissionMap out(h, w);
  for (int y = 0; y < h; ++y) {
    const int y0 = std::max(0, y - r), y1 = std::min(h - 1, y + r);
    for (int x = 0; x < w; ++x) {
      double m = rowmin[static_cast<size_t>(y0) * w + x];
      for (int k = y0 + 1; k <= y1; ++k)
        m = std::min(m, rowmin[static_cast<size_t>(k) * w + x]);
      const double t = std::clamp(1.0 - m, t_floor, 1.0);
      out.at(0, y, x) = t;
      out.at(1, y, x) = t;
      out.at(2, y, x) = t;
    }
  }
  return out;
}

// Per-channel mean over the pixels whose (green,blue) dark channel ranks in
// the top `fraction`. Ties break by pixel index so results are deterministic.
inline AtmosphereLight estimate_atmosphere(const ImageRgb& observed, double fraction = 0.001) {
  if (!(fraction > 0.0) || fraction > 1.0)
    throw ConfigError("estimate_atmosphere: fraction must be in (0,1]");
  const std::int64_t plane = observed.plane();
  const double* gp = observed.pix.data() + plane;
  const double* bp = observed.pix.data() + 2 * plane;
  std::vector<std::int64_t> idx(static_cast<size_t>(plane));
  std::iota(idx.begin(), idx.end(), std::int64_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
    return std::min(gp[a], bp[a]) > std::min(gp[b], bp[b]);
  });
  const std::int64_t count =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(fraction * static_cast<double>(plane)));
  AtmosphereLight out;
  for (int c = 0; c < 3; ++c) {
    const double* cp = observed.pix.data() + c * plane;
    double acc = 0.0;
    for (std::int64_t k = 0; k < count; ++k) acc += cp[idx[static_cast<size_t>(k)]];
    out.rgb[static_cast<size_t>(c)] = acc / static_cast<double>(count);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Degradation samples

// One observed image with its priors and the re-degraded variants used to
// condition the two encoders. Atmosphere-only variants are built directly on
// the observed image via I + (1-T)(A^m - A); joint variants go through the
// inverted image so the transmission change takes effect.
struct DegradationSample {
  ImageRgb base;
  AtmosphereLight atmos;
  TransmissionMap trans;
  std::vector<AtmosphereLight> atmos_variants;
  std::vector<std::array<double, 3>> lambdas;
  std::vector<TransmissionMap> trans_variants;
  std::vector<std::array<double, 3>> gammas;
  std::vector<ImageRgb> atm_images;        // I^m, one per atmosphere variant
  std::vector<ImageRgb> atm_trans_images;  // I^{m,n}, n-th paired with m = n % M

  int paired_m(int n) const {
    return atmos_variants.empty() ? 0 : n % static_cast<int>(atmos_variants.size());
  }
};

inline ImageRgb build_atm_image(const ImageRgb& observed, const AtmosphereLight& atmos,
                                const TransmissionMap& trans,
                                const AtmosphereLight& varied) {
  ImageRgb out(observed.height, observed.width);
  const std::int64_t plane = observed.plane();
  for (int c = 0; c < 3; ++c) {
    const double da = varied.rgb[static_cast<size_t>(c)] - atmos.rgb[static_cast<size_t>(c)];
    const double* i = observed.pix.data() + c * plane;
    const double* t = trans.planes.data() + c * plane;
    double* o = out.pix.data() + c * plane;
    for (std::int64_t k = 0; k < plane; ++k) o[k] = i[k] + (1.0 - t[k]) * da;
  }
  clip01_inplace(out.pix);
  return out;
}

inline ImageRgb build_atm_trans_image(const ImageRgb& observed, const AtmosphereLight& atmos,
                                      const TransmissionMap& trans,
                                      const AtmosphereLight& varied_atmos,
                                      const TransmissionMap& varied_trans,
                                      double t_floor = kTransmissionFloor) {
  return synthesize(invert(observed, atmos, trans, t_floor), varied_atmos, varied_trans);
}

inline DegradationSample make_degradation_sample_forced(
    ImageRgb base, AtmosphereLight atmos, TransmissionMap trans,
    const std::vector<std::array<double, 3>>& lambdas,
    const std::vector<std::array<double, 3>>& gammas) {
  DegradationSample s;
  s.base = std::move(base);
  s.atmos = atmos;
  s.trans = std::move(trans);
  s.lambdas = lambdas;
  s.gammas = gammas;
  const std::int64_t plane = s.trans.plane();
  for (const auto& lam : lambdas) {
    AtmosphereLight varied;
    for (int c = 0; c < 3; ++c)
      varied.rgb[static_cast<size_t>(c)] =
          std::clamp(lam[static_cast<size_t>(c)] * atmos.rgb[static_cast<size_t>(c)], 0.0, 1.0);
    s.atmos_variants.push_back(varied);
    s.atm_images.push_back(build_atm_image(s.base, atmos, s.trans, varied));
  }
  for (const auto& gam : gammas) {
    TransmissionMap varied(s.trans.height, s.trans.width);
    for (int c = 0; c < 3; ++c) {
      const double g = gam[static_cast<size_t>(c)];
      const double* src = s.trans.planes.data() + c * plane;
      double* dst = varied.planes.data() + c * plane;
      for (std::int64_t i = 0; i < plane; ++i) dst[i] = std::min(g * src[i], 1.0);
    }
    s.trans_variants.push_back(std::move(varied));
  }
  for (size_t n = 0; n < s.trans_variants.size(); ++n) {
    const auto& va = s.atmos_variants.empty()
                         ? atmos
                         : s.atmos_variants[static_cast<size_t>(s.paired_m(static_cast<int>(n)))];
    s.atm_trans_images.push_back(
        build_atm_trans_image(s.base, atmos, s.trans, va, s.trans_variants[n]));
  }
  return s;
}

inline DegradationSample make_degradation_sample(ImageRgb base, AtmosphereLight atmos,
                                                 TransmissionMap trans, int m_count,
                                                 int n_count, Rng& rng,
                                                 double lambda_lo = kLambdaLo,
                                                 double lambda_hi = kLambdaHi,
                                                 double gamma_lo = kGammaLo,
                                                 double gamma_hi = kGammaHi) {
  std::vector<std::array<double, 3>> lambdas(static_cast<size_t>(m_count));
  for (auto& lam : lambdas)
    for (int c = 0; c < 3; ++c)
      lam[static_cast<size_t>(c)] = rng.uniform_open(lambda_lo, lambda_hi);
  std::vector<std::array<double, 3>> gammas(static_cast<size_t>(n_count));
  for (auto& gam : gammas)
    for (int c = 0; c < 3; ++c)
      gam[static_cast<size_t>(c)] = rng.uniform_open(gamma_lo, gamma_hi);
  return make_degradation_sample_forced(std::move(base), atmos, std::move(trans), lambdas,
                                        gammas);
}

}  // namespace gupdm
