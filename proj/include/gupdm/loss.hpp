#pragma once

// Training objective: mean absolute error + weighted SSIM term + weighted
// perceptual term computed through a three-tap feature extractor.

#include <array>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gupdm/errors.hpp"
#include "gupdm/rng.hpp"
#include "gupdm/tensor.hpp"

namespace gupdm {

struct LossWeights {
  double lambda1 = 0.04;  // SSIM term
  double lambda2 = 0.02;  // perceptual term
};

// Mean absolute error; with huber_delta > 0 the smooth quadratic-near-zero
// variant is used instead.
inline Tensor l1_loss(const Tensor& pred, const Tensor& target, double huber_delta = 0.0) {
  detail::require_same_shape(pred, target, "l1_loss");
  Tensor d = sub(pred, target);
  if (huber_delta <= 0.0) return mean(abs_val(d));
  const double delta = huber_delta;
  Tensor per = detail::unary_op(
      "huber", d,
      [delta](double x) {
        const double a = std::fabs(x);
        return a <= delta ? x * x / (2.0 * delta) : a - delta / 2.0;
      },
      [delta](double x, double, double g) {
        return g * (std::fabs(x) <= delta ? x / delta : (x > 0.0 ? 1.0 : -1.0));
      });
  return mean(per);
}

namespace detail {

// Depthwise Gaussian window as a conv kernel over `channels` planes.
inline Tensor gaussian_conv_weight(int channels, int win, double sigma) {
  Tensor w({channels, channels, win, win}, 0.0);
  const int r = win / 2;
  double total = 0.0;
  std::vector<double> g(static_cast<size_t>(win) * win);
  for (int y = 0; y < win; ++y)
    for (int x = 0; x < win; ++x) {
      const double dy = y - r, dx = x - r;
      const double v = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      g[static_cast<size_t>(y) * win + x] = v;
      total += v;
    }
  for (double& v : g) v /= total;
  for (int c = 0; c < channels; ++c) {
    double* dst = w.data() + ((static_cast<std::int64_t>(c) * channels + c) * win * win);
    std::copy(g.begin(), g.end(), dst);
  }
  return w;
}

}  // namespace detail

// 1 - SSIM(pred, target), differentiable. The 11x11 window shrinks to fit
// small inputs (next odd size <= min(H,W)); stabilizers match the 0-1 scale.
inline Tensor ssim_loss(const Tensor& pred, const Tensor& target) {
  detail::require_same_shape(pred, target, "ssim_loss");
  if (pred.rank() != 4) throw ShapeError("ssim_loss: expected [N,C,H,W]");
  const int channels = pred.dim(1);
  int win = std::min({11, pred.dim(2), pred.dim(3)});
  if (win % 2 == 0) --win;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  Tensor gw = detail::gaussian_conv_weight(channels, win, 1.5);
  Tensor gb({channels}, 0.0);

  Tensor mu1 = conv2d(pred, gw, gb);
  Tensor mu2 = conv2d(target, gw, gb);
  Tensor e11 = conv2d(mul(pred, pred), gw, gb);
  Tensor e22 = conv2d(mul(target, target), gw, gb);
  Tensor e12 = conv2d(mul(pred, target), gw, gb);
  Tensor mu12 = mul(mu1, mu2);
  Tensor v1 = sub(e11, mul(mu1, mu1));
  Tensor v2 = sub(e22, mul(mu2, mu2));
  Tensor cov = sub(e12, mu12);
  Tensor num = mul(add_scalar(mul_scalar(mu12, 2.0), c1), add_scalar(mul_scalar(cov, 2.0), c2));
  Tensor den = mul(add_scalar(add(mul(mu1, mu1), mul(mu2, mu2)), c1),
                   add_scalar(add(v1, v2), c2));
  Tensor ssim_mean = mean(div(num, den));
  return add_scalar(mul_scalar(ssim_mean, -1.0), 1.0);
}

// ---------------------------------------------------------------------------
// Perceptual term

// Exposes a fixed number of feature maps ("taps") for an image tensor.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual int tap_count() const = 0;
  virtual std::vector<Tensor> taps(const Tensor& image) const = 0;
};

// Frozen, seeded three-stage conv pyramid (channels 8/16/32, stride-2 between
// stages). Stands in for a pretrained backbone; weights can be replaced from
// a checkpoint file.
class RandomConvExtractor final : public FeatureExtractor {
 public:
  explicit RandomConvExtractor(std::uint64_t seed = 1) {
    Rng rng(seed);
    const std::array<int, 4> ch{3, 8, 16, 32};
    for (int s = 0; s < 3; ++s) {
      Tensor w({ch[static_cast<size_t>(s + 1)], ch[static_cast<size_t>(s)], 3, 3});
      fill_he(w, rng, ch[static_cast<size_t>(s)] * 9);
      Tensor b({ch[static_cast<size_t>(s + 1)]}, 0.0);
      weights_.push_back(w);
      biases_.push_back(b);
    }
  }

  int tap_count() const override { return 3; }

  std::vector<Tensor> taps(const Tensor& image) const override {
    std::vector<Tensor> out;
    Tensor x = image;
    for (int s = 0; s < 3; ++s) {
      if (s > 0) x = downsample2x(x);
      x = relu(conv2d(x, weights_[static_cast<size_t>(s)], biases_[static_cast<size_t>(s)],
                      1, 1));
      out.push_back(x);
    }
    return out;
  }

  std::vector<std::pair<std::string, Tensor>> named_params() {
    std::vector<std::pair<std::string, Tensor>> out;
    for (int s = 0; s < 3; ++s) {
      out.emplace_back("extractor.stage" + std::to_string(s) + ".weight",
                       weights_[static_cast<size_t>(s)]);
      out.emplace_back("extractor.stage" + std::to_string(s) + ".bias",
                       biases_[static_cast<size_t>(s)]);
    }
    return out;
  }

 private:
  std::vector<Tensor> weights_, biases_;
};

// Pass-through taps at three scales; used as a degenerate extractor.
class IdentityExtractor final : public FeatureExtractor {
 public:
  int tap_count() const override { return 3; }
  std::vector<Tensor> taps(const Tensor& image) const override {
    Tensor half = downsample2x(image);
    return {image, half, downsample2x(half)};
  }
};

// Mean of the per-tap MSEs between feature maps of pred and target.
inline Tensor perceptual_loss(const Tensor& pred, const Tensor& target,
                              const FeatureExtractor& extractor) {
  detail::require_same_shape(pred, target, "perceptual_loss");
  if (extractor.tap_count() != 3)
    throw ContractError("perceptual_loss: extractor must expose exactly 3 taps");
  const std::vector<Tensor> fp = extractor.taps(pred);
  const std::vector<Tensor> ft = extractor.taps(target);
  if (fp.size() != 3 || ft.size() != 3)
    throw ContractError("perceptual_loss: extractor returned a wrong tap count");
  Tensor acc = mean(square(sub(fp[0], ft[0])));
  for (int i = 1; i < 3; ++i) acc = add(acc, mean(square(sub(fp[static_cast<size_t>(i)],
                                                             ft[static_cast<size_t>(i)]))));
  return mul_scalar(acc, 1.0 / 3.0);
}

// ---------------------------------------------------------------------------

struct TotalLoss {
  Tensor value;           // scalar on the active tape
  double l1 = 0.0;        // component values, for reporting
  double ssim = 0.0;
  double perceptual = 0.0;
};

inline TotalLoss total_loss(const Tensor& pred, const Tensor& target,
                            const LossWeights& weights, const FeatureExtractor& extractor,
                            double huber_delta = 0.0) {
  TotalLoss out;
  Tensor l1 = l1_loss(pred, target, huber_delta);
  Tensor ss = ssim_loss(pred, target);
  Tensor per = perceptual_loss(pred, target, extractor);
  out.l1 = l1.value();
  out.ssim = ss.value();
  out.perceptual = per.value();
  out.value = add(l1, add(mul_scalar(ss, weights.lambda1), mul_scalar(per, weights.lambda2)));
  return out;
}

}  // namespace gupdm
