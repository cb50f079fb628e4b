#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "gupdm/errors.hpp"
#include "gupdm/tensor.hpp"

namespace gupdm {

// H x W RGB image, three channel planes, each row-major. Values live in [0,1].
struct ImageRgb {
  int height = 0;
  int width = 0;
  std::vector<double> pix;  // size 3*height*width, plane order R,G,B

  ImageRgb() = default;
  ImageRgb(int h, int w, double fill = 0.0)
      : height(h), width(w), pix(static_cast<size_t>(3) * h * w, fill) {
    if (h <= 0 || w <= 0) throw ShapeError("image extents must be positive");
  }

  std::int64_t plane() const { return static_cast<std::int64_t>(height) * width; }
  double& at(int c, int y, int x) { return pix[(c * plane()) + y * width + x]; }
  double at(int c, int y, int x) const { return pix[(c * plane()) + y * width + x]; }
};

// Global background light per channel, each component in [0,1].
struct AtmosphereLight {
  std::array<double, 3> rgb{0.0, 0.0, 0.0};
  double r() const { return rgb[0]; }
  double g() const { return rgb[1]; }
  double b() const { return rgb[2]; }
};

// Per-pixel, per-channel fraction of scene radiance reaching the camera;
// values in (0,1]. Same plane layout as ImageRgb.
struct TransmissionMap {
  int height = 0;
  int width = 0;
  std::vector<double> planes;

  TransmissionMap() = default;
  TransmissionMap(int h, int w, double fill = 1.0)
      : height(h), width(w), planes(static_cast<size_t>(3) * h * w, fill) {
    if (h <= 0 || w <= 0) throw ShapeError("map extents must be positive");
  }

  std::int64_t plane() const { return static_cast<std::int64_t>(height) * width; }
  double& at(int c, int y, int x) { return planes[(c * plane()) + y * width + x]; }
  double at(int c, int y, int x) const { return planes[(c * plane()) + y * width + x]; }
};

inline void clip01_inplace(std::vector<double>& v) {
  for (double& x : v) x = x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x);
}

inline bool same_size(const ImageRgb& a, const ImageRgb& b) {
  return a.height == b.height && a.width == b.width;
}

inline bool same_size(const ImageRgb& a, const TransmissionMap& t) {
  return a.height == t.height && a.width == t.width;
}

// ---------------------------------------------------------------------------
// Tensor bridging (NCHW, batch of images)

inline Tensor to_tensor(const ImageRgb& img) {
  Tensor t({1, 3, img.height, img.width});
  std::copy(img.pix.begin(), img.pix.end(), t.data());
  return t;
}

inline Tensor to_tensor(const std::vector<ImageRgb>& batch) {
  if (batch.empty()) throw ShapeError("to_tensor: empty batch");
  const int h = batch[0].height, w = batch[0].width;
  Tensor t({static_cast<int>(batch.size()), 3, h, w});
  double* p = t.data();
  for (const auto& img : batch) {
    if (img.height != h || img.width != w) throw ShapeError("to_tensor: ragged batch");
    std::copy(img.pix.begin(), img.pix.end(), p);
    p += img.pix.size();
  }
  return t;
}

inline Tensor to_tensor(const TransmissionMap& map) {
  Tensor t({1, 3, map.height, map.width});
  std::copy(map.planes.begin(), map.planes.end(), t.data());
  return t;
}

inline Tensor to_tensor(const std::vector<TransmissionMap>& batch) {
  if (batch.empty()) throw ShapeError("to_tensor: empty batch");
  const int h = batch[0].height, w = batch[0].width;
  Tensor t({static_cast<int>(batch.size()), 3, h, w});
  double* p = t.data();
  for (const auto& m : batch) {
    if (m.height != h || m.width != w) throw ShapeError("to_tensor: ragged batch");
    std::copy(m.planes.begin(), m.planes.end(), p);
    p += m.planes.size();
  }
  return t;
}

inline ImageRgb image_from_tensor(const Tensor& t, int index = 0) {
  if (t.rank() != 4 || t.dim(1) != 3) throw ShapeError("image_from_tensor: expected [N,3,H,W]");
  if (index < 0 || index >= t.dim(0)) throw ShapeError("image_from_tensor: bad index");
  ImageRgb img(t.dim(2), t.dim(3));
  const double* src = t.data() + static_cast<std::int64_t>(index) * 3 * img.plane();
  std::copy(src, src + img.pix.size(), img.pix.begin());
  clip01_inplace(img.pix);
  return img;
}

}  // namespace gupdm
