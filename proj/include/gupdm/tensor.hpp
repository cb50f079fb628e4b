#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "gupdm/errors.hpp"
#include "gupdm/rng.hpp"

namespace gupdm {

using Shape = std::vector<int>;

inline std::int64_t numel_of(const Shape& shape) {
  std::int64_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("tensor extents must be positive");
    n *= d;
  }
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first needed; same length as data after
  bool requires_grad = false;
  std::uint64_t tape_id = 0;  // id of the tape whose graph produced this tensor
};
}  // namespace detail

class Tape;

// Handle to a flat 64-bit real array with shape. Copies share storage; use
// clone() for an independent buffer.
class Tensor {
 public:
  Tensor() : impl_(std::make_shared<detail::TensorImpl>()) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : impl_(std::make_shared<detail::TensorImpl>()) {
    impl_->shape = std::move(shape);
    impl_->data.assign(static_cast<size_t>(numel_of(impl_->shape)), fill);
  }

  static Tensor from_vector(Shape shape, std::vector<double> values) {
    Tensor t;
    const auto n = numel_of(shape);
    if (static_cast<size_t>(n) != values.size())
      throw ShapeError("from_vector: " + std::to_string(values.size()) +
                       " values for shape " + shape_str(shape));
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(values);
    return t;
  }

  static Tensor scalar(double v) { return from_vector({1}, {v}); }

  const Shape& shape() const { return impl_->shape; }
  int dim(int i) const { return impl_->shape.at(static_cast<size_t>(i)); }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& vec() { return impl_->data; }
  const std::vector<double>& vec() const { return impl_->data; }

  double value() const {
    if (numel() != 1) throw ContractError("value(): tensor is not a scalar");
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    impl_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !impl_->grad.empty(); }
  double* grad() {
    ensure_grad();
    return impl_->grad.data();
  }
  const std::vector<double>& grad_vec() const {
    const_cast<Tensor*>(this)->ensure_grad();
    return impl_->grad;
  }
  void ensure_grad() {
    if (impl_->grad.size() != impl_->data.size())
      impl_->grad.assign(impl_->data.size(), 0.0);
  }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  // Deep copy; does not participate in any graph.
  Tensor clone() const {
    Tensor t;
    t.impl_->shape = impl_->shape;
    t.impl_->data = impl_->data;
    return t;
  }

  // Same values, severed from the tape and from leaf gradient tracking.
  Tensor detach() const { return clone(); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  detail::TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

inline void check_finite(const Tensor& t, const char* what) {
  for (double v : t.vec())
    if (!std::isfinite(v)) throw NumericError(std::string(what) + ": non-finite value");
}

// Records backward rules in execution order; replayed once, in reverse.
class Tape {
 public:
  Tape() : id_(next_id()) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* active() { return active_slot(); }
  std::uint64_t id() const { return id_; }
  size_t size() const { return entries_.size(); }

  void record(std::vector<Tensor> inputs, std::function<void()> backward) {
    entries_.push_back({std::move(inputs), std::move(backward)});
  }

  void backward(Tensor loss) {
    if (loss.numel() != 1) throw ContractError("backward: loss must be a scalar");
    if (loss.impl()->tape_id != id_ && !loss.requires_grad())
      throw ContractError("backward: loss was not produced on this tape");
    if (!std::isfinite(loss.value())) throw NumericError("backward: loss is non-finite");
    loss.grad()[0] += 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) it->backward();
    std::vector<const detail::TensorImpl*> seen;
    seen.reserve(entries_.size() * 2);
    for (const auto& e : entries_)
      for (const auto& in : e.inputs) seen.push_back(in.impl());
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    for (const detail::TensorImpl* impl : seen)
      for (double g : impl->grad)
        if (!std::isfinite(g)) throw NumericError("backward: non-finite gradient");
  }

  void clear() { entries_.clear(); }

  struct Scope {
    explicit Scope(Tape& t) : prev_(active_slot()) { active_slot() = &t; }
    ~Scope() { active_slot() = prev_; }
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;

   private:
    Tape* prev_;
  };

 private:
  struct Entry {
    std::vector<Tensor> inputs;
    std::function<void()> backward;
  };

  static Tape*& active_slot() {
    thread_local Tape* slot = nullptr;
    return slot;
  }
  static std::uint64_t next_id() {
    static std::uint64_t counter = 0;
    return ++counter;
  }

  std::vector<Entry> entries_;
  std::uint64_t id_;
};

namespace detail {

// Four-lane dot product; fixed association so results are reproducible while
// still vectorizing.
inline double dot4(const double* a, const double* b, int len) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  int i = 0;
  for (; i + 4 <= len; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < len; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

inline bool tracked(const Tensor& t, const Tape* tape) {
  return tape && (t.requires_grad() || t.impl()->tape_id == tape->id());
}

inline void mark_output(Tensor& out, const Tape* tape) {
  out.impl()->tape_id = tape->id();
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
}

// Shared skeleton for elementwise binary ops.
template <typename Fwd, typename Bwd>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd, Bwd bwd) {
  require_same_shape(a, b, name);
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i], pb[i]);
  check_finite(out, name);
  Tape* tape = Tape::active();
  const bool ta = tracked(a, tape), tb = tracked(b, tape);
  if (ta || tb) {
    mark_output(out, tape);
    Tensor ia = a, ib = b;
    tape->record({ia, ib}, [=]() mutable {
      const double* go = out.grad_vec().data();
      const double* xa = ia.data();
      const double* xb = ib.data();
      double* ga = ta ? ia.grad() : nullptr;
      double* gb = tb ? ib.grad() : nullptr;
      for (std::int64_t i = 0; i < n; ++i) {
        auto [da, db] = bwd(xa[i], xb[i], go[i]);
        if (ga) ga[i] += da;
        if (gb) gb[i] += db;
      }
    });
  }
  return out;
}

// Shared skeleton for elementwise unary ops; backward gets (x, y, dy).
template <typename Fwd, typename Bwd>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Bwd bwd) {
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(pa[i]);
  check_finite(out, name);
  Tape* tape = Tape::active();
  if (tracked(a, tape)) {
    mark_output(out, tape);
    Tensor ia = a;
    tape->record({ia}, [=]() mutable {
      const double* go = out.grad_vec().data();
      const double* xa = ia.data();
      const double* yo = out.data();
      double* ga = ia.grad();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += bwd(xa[i], yo[i], go[i]);
    });
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double g) { return std::pair<double, double>{g, g}; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double g) { return std::pair<double, double>{g, -g}; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double x, double y, double g) { return std::pair<double, double>{g * y, g * x}; });
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double x, double y, double g) {
        return std::pair<double, double>{g / y, -g * x / (y * y)};
      });
}

inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary_op(
      "add_scalar", a, [s](double x) { return x + s; },
      [](double, double, double g) { return g; });
}

inline Tensor mul_scalar(const Tensor& a, double s) {
  return detail::unary_op(
      "mul_scalar", a, [s](double x) { return x * s; },
      [s](double, double, double g) { return g * s; });
}

inline Tensor relu(const Tensor& a) {
  return detail::unary_op(
      "relu", a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x, double, double g) { return x > 0.0 ? g : 0.0; });
}

inline Tensor sigmoid(const Tensor& a) {
  return detail::unary_op(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y, double g) { return g * y * (1.0 - y); });
}

inline Tensor square(const Tensor& a) {
  return detail::unary_op(
      "square", a, [](double x) { return x * x; },
      [](double x, double, double g) { return 2.0 * x * g; });
}

// |x| with subgradient 0 at the kink.
inline Tensor abs_val(const Tensor& a) {
  return detail::unary_op(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double, double g) { return x > 0.0 ? g : (x < 0.0 ? -g : 0.0); });
}

// Clamp to [0,1]; gradient passes inside the closed interval.
inline Tensor clamp01(const Tensor& a) {
  return detail::unary_op(
      "clamp01", a, [](double x) { return std::clamp(x, 0.0, 1.0); },
      [](double x, double, double g) { return (x >= 0.0 && x <= 1.0) ? g : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum(const Tensor& a) {
  double acc = 0.0;
  for (double v : a.vec()) acc += v;
  Tensor out = Tensor::scalar(acc);
  check_finite(out, "sum");
  Tape* tape = Tape::active();
  if (detail::tracked(a, tape)) {
    detail::mark_output(out, tape);
    Tensor ia = a;
    tape->record({ia}, [=]() mutable {
      const double g = out.grad_vec()[0];
      double* ga = ia.grad();
      const std::int64_t n = ia.numel();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

inline Tensor mean(const Tensor& a) {
  const double inv = 1.0 / static_cast<double>(a.numel());
  double acc = 0.0;
  for (double v : a.vec()) acc += v;
  Tensor out = Tensor::scalar(acc * inv);
  check_finite(out, "mean");
  Tape* tape = Tape::active();
  if (detail::tracked(a, tape)) {
    detail::mark_output(out, tape);
    Tensor ia = a;
    tape->record({ia}, [=]() mutable {
      const double g = out.grad_vec()[0] * inv;
      double* ga = ia.grad();
      const std::int64_t n = ia.numel();
      for (std::int64_t i = 0; i < n; ++i) ga[i] += g;
    });
  }
  return out;
}

// Softmax over the last dimension; rank 1 or 2.
inline Tensor softmax(const Tensor& a) {
  if (a.rank() != 1 && a.rank() != 2) throw ShapeError("softmax: rank must be 1 or 2");
  const int k = a.dim(a.rank() - 1);
  const int rows = static_cast<int>(a.numel()) / k;
  Tensor out(a.shape());
  const double* pa = a.data();
  double* po = out.data();
  for (int r = 0; r < rows; ++r) {
    const double* x = pa + static_cast<std::int64_t>(r) * k;
    double* y = po + static_cast<std::int64_t>(r) * k;
    double mx = x[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, x[i]);
    double s = 0.0;
    for (int i = 0; i < k; ++i) {
      y[i] = std::exp(x[i] - mx);
      s += y[i];
    }
    const double inv = 1.0 / s;
    for (int i = 0; i < k; ++i) y[i] *= inv;
  }
  check_finite(out, "softmax");
  Tape* tape = Tape::active();
  if (detail::tracked(a, tape)) {
    detail::mark_output(out, tape);
    Tensor ia = a;
    tape->record({ia}, [=]() mutable {
      const double* y = out.data();
      const double* gy = out.grad_vec().data();
      double* ga = ia.grad();
      for (int r = 0; r < rows; ++r) {
        const std::int64_t off = static_cast<std::int64_t>(r) * k;
        double dot = 0.0;
        for (int i = 0; i < k; ++i) dot += gy[off + i] * y[off + i];
        for (int i = 0; i < k; ++i) ga[off + i] += y[off + i] * (gy[off + i] - dot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear layers

// Affine map: out[n,e] = sum_d in[n,d] * w[d,e] + b[e].
inline Tensor fc(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  if (input.rank() != 2 || weight.rank() != 2 || bias.rank() != 1)
    throw ShapeError("fc: expected input[N,D], weight[D,E], bias[E]");
  const int n = input.dim(0), d = input.dim(1);
  const int e = weight.dim(1);
  if (weight.dim(0) != d || bias.dim(0) != e)
    throw ShapeError("fc: dimension mismatch input" + shape_str(input.shape()) +
                     " weight" + shape_str(weight.shape()));
  Tensor out({n, e});
  const double* pi = input.data();
  const double* pw = weight.data();
  const double* pb = bias.data();
  double* po = out.data();
  for (int r = 0; r < n; ++r) {
    double* orow = po + static_cast<std::int64_t>(r) * e;
    std::memcpy(orow, pb, sizeof(double) * static_cast<size_t>(e));
    const double* irow = pi + static_cast<std::int64_t>(r) * d;
    for (int j = 0; j < d; ++j) {
      const double x = irow[j];
      const double* wrow = pw + static_cast<std::int64_t>(j) * e;
      for (int c = 0; c < e; ++c) orow[c] += x * wrow[c];
    }
  }
  check_finite(out, "fc");
  Tape* tape = Tape::active();
  const bool ti = detail::tracked(input, tape);
  const bool tw = detail::tracked(weight, tape);
  const bool tb = detail::tracked(bias, tape);
  if (ti || tw || tb) {
    detail::mark_output(out, tape);
    Tensor in = input, w = weight, b = bias;
    tape->record({in, w, b}, [=]() mutable {
      const double* go = out.grad_vec().data();
      const double* xi = in.data();
      const double* xw = w.data();
      for (int r = 0; r < n; ++r) {
        const double* grow = go + static_cast<std::int64_t>(r) * e;
        if (ti) {
          double* gi = in.grad() + static_cast<std::int64_t>(r) * d;
          for (int j = 0; j < d; ++j)
            gi[j] += detail::dot4(grow, xw + static_cast<std::int64_t>(j) * e, e);
        }
        if (tw) {
          const double* irow = xi + static_cast<std::int64_t>(r) * d;
          double* gw = w.grad();
          for (int j = 0; j < d; ++j) {
            const double x = irow[j];
            double* gwrow = gw + static_cast<std::int64_t>(j) * e;
            for (int c = 0; c < e; ++c) gwrow[c] += x * grow[c];
          }
        }
        if (tb) {
          double* gb = b.grad();
          for (int c = 0; c < e; ++c) gb[c] += grow[c];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation), NCHW.

inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                     int stride = 1, int padding = 0) {
  if (input.rank() != 4 || weight.rank() != 4 || bias.rank() != 1)
    throw ShapeError("conv2d: expected input[N,C,H,W], weight[O,C,kh,kw], bias[O]");
  const int n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const int o = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  if (weight.dim(1) != c)
    throw ShapeError("conv2d: input channels " + std::to_string(c) +
                     " != kernel channels " + std::to_string(weight.dim(1)));
  if (bias.dim(0) != o) throw ShapeError("conv2d: bias length != output channels");
  if (kh % 2 == 0 || kw % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: bad stride/padding");
  if (h + 2 * padding < kh || w + 2 * padding < kw)
    throw ShapeError("conv2d: kernel larger than padded input");
  const int oh = (h + 2 * padding - kh) / stride + 1;
  const int ow = (w + 2 * padding - kw) / stride + 1;

  Tensor out({n, o, oh, ow});
  {
    const double* pi = input.data();
    const double* pw = weight.data();
    const double* pb = bias.data();
    double* po = out.data();
    for (int in_ = 0; in_ < n; ++in_)
      for (int io = 0; io < o; ++io) {
        double* oplane = po + (static_cast<std::int64_t>(in_) * o + io) * oh * ow;
        const double bv = pb[io];
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i) oplane[i] = bv;
        for (int ic = 0; ic < c; ++ic) {
          const double* iplane = pi + (static_cast<std::int64_t>(in_) * c + ic) * h * w;
          const double* kplane = pw + (static_cast<std::int64_t>(io) * c + ic) * kh * kw;
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const double wv = kplane[ky * kw + kx];
              for (int oy = 0; oy < oh; ++oy) {
                const int iy = oy * stride + ky - padding;
                if (iy < 0 || iy >= h) continue;
                double* orow = oplane + static_cast<std::int64_t>(oy) * ow;
                const double* irow = iplane + static_cast<std::int64_t>(iy) * w;
                if (stride == 1) {
                  const int x0 = std::max(0, padding - kx);
                  const int x1 = std::min(ow, w + padding - kx);
                  const double* ir = irow + (x0 + kx - padding);
                  double* orp = orow + x0;
                  const int len = x1 - x0;
                  for (int i = 0; i < len; ++i) orp[i] += wv * ir[i];
                } else {
                  for (int ox = 0; ox < ow; ++ox) {
                    const int ix = ox * stride + kx - padding;
                    if (ix >= 0 && ix < w) orow[ox] += wv * irow[ix];
                  }
                }
              }
            }
        }
      }
  }
  check_finite(out, "conv2d");

  Tape* tape = Tape::active();
  const bool ti = detail::tracked(input, tape);
  const bool tw = detail::tracked(weight, tape);
  const bool tb = detail::tracked(bias, tape);
  if (ti || tw || tb) {
    detail::mark_output(out, tape);
    Tensor in = input, wt = weight, bs = bias;
    tape->record({in, wt, bs}, [=]() mutable {
      const double* go = out.grad_vec().data();
      const double* xi = in.data();
      const double* xw = wt.data();
      double* gi = ti ? in.grad() : nullptr;
      double* gw = tw ? wt.grad() : nullptr;
      double* gb = tb ? bs.grad() : nullptr;
      for (int in_ = 0; in_ < n; ++in_)
        for (int io = 0; io < o; ++io) {
          const double* gplane = go + (static_cast<std::int64_t>(in_) * o + io) * oh * ow;
          if (gb) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < static_cast<std::int64_t>(oh) * ow; ++i)
              acc += gplane[i];
            gb[io] += acc;
          }
          if (!gi && !gw) continue;
          for (int ic = 0; ic < c; ++ic) {
            const double* iplane = xi + (static_cast<std::int64_t>(in_) * c + ic) * h * w;
            double* giplane =
                gi ? gi + (static_cast<std::int64_t>(in_) * c + ic) * h * w : nullptr;
            const double* kplane = xw + (static_cast<std::int64_t>(io) * c + ic) * kh * kw;
            double* gkplane =
                gw ? gw + (static_cast<std::int64_t>(io) * c + ic) * kh * kw : nullptr;
            for (int ky = 0; ky < kh; ++ky)
              for (int kx = 0; kx < kw; ++kx) {
                const double wv = kplane[ky * kw + kx];
                double wacc = 0.0;
                for (int oy = 0; oy < oh; ++oy) {
                  const int iy = oy * stride + ky - padding;
                  if (iy < 0 || iy >= h) continue;
                  const double* grow = gplane + static_cast<std::int64_t>(oy) * ow;
                  const double* irow = iplane + static_cast<std::int64_t>(iy) * w;
                  double* girow =
                      giplane ? giplane + static_cast<std::int64_t>(iy) * w : nullptr;
                  if (stride == 1) {
                    const int x0 = std::max(0, padding - kx);
                    const int x1 = std::min(ow, w + padding - kx);
                    const int len = x1 - x0;
                    const int ioff = x0 + kx - padding;
                    if (girow) {
                      double* gir = girow + ioff;
                      const double* grp = grow + x0;
                      for (int i = 0; i < len; ++i) gir[i] += wv * grp[i];
                    }
                    if (gkplane) wacc += detail::dot4(irow + ioff, grow + x0, len);
                  } else {
                    for (int ox = 0; ox < ow; ++ox) {
                      const int ix = ox * stride + kx - padding;
                      if (ix < 0 || ix >= w) continue;
                      if (girow) girow[ix] += wv * grow[ox];
                      if (gkplane) wacc += irow[ix] * grow[ox];
                    }
                  }
                }
                if (gkplane) gkplane[ky * kw + kx] += wacc;
              }
          }
        }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Pooling / resampling, NCHW.

inline Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool: expected [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  const double inv = 1.0 / static_cast<double>(plane);
  Tensor out({n, c});
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(n) * c; ++p) {
    double acc = 0.0;
    const double* src = px + p * plane;
    for (std::int64_t i = 0; i < plane; ++i) acc += src[i];
    po[p] = acc * inv;
  }
  check_finite(out, "global_avg_pool");
  Tape* tape = Tape::active();
  if (detail::tracked(x, tape)) {
    detail::mark_output(out, tape);
    Tensor in = x;
    tape->record({in}, [=]() mutable {
      const double* go = out.grad_vec().data();
      double* gi = in.grad();
      for (std::int64_t p = 0; p < static_cast<std::int64_t>(n) * c; ++p) {
        const double g = go[p] * inv;
        double* dst = gi + p * plane;
        for (std::int64_t i = 0; i < plane; ++i) dst[i] += g;
      }
    });
  }
  return out;
}

inline Tensor global_max_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_max_pool: expected [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  Tensor out({n, c});
  auto argmax = std::make_shared<std::vector<std::int64_t>>(static_cast<size_t>(n) * c);
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(n) * c; ++p) {
    const double* src = px + p * plane;
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < plane; ++i)
      if (src[i] > src[best]) best = i;  // first max wins on ties
    po[p] = src[best];
    (*argmax)[static_cast<size_t>(p)] = best;
  }
  check_finite(out, "global_max_pool");
  Tape* tape = Tape::active();
  if (detail::tracked(x, tape)) {
    detail::mark_output(out, tape);
    Tensor in = x;
    tape->record({in}, [=]() mutable {
      const double* go = out.grad_vec().data();
      double* gi = in.grad();
      for (std::int64_t p = 0; p < static_cast<std::int64_t>(n) * c; ++p)
        gi[p * plane + (*argmax)[static_cast<size_t>(p)]] += go[p];
    });
  }
  return out;
}

// Nearest-neighbor 2x upsampling.
inline Tensor upsample2x(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("upsample2x: expected [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor out({n, c, 2 * h, 2 * w});
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(n) * c; ++p) {
    const double* src = px + p * h * w;
    double* dst = po + p * 4 * h * w;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        const double v = src[y * w + xx];
        double* d0 = dst + (2 * y) * (2 * w) + 2 * xx;
        double* d1 = d0 + 2 * w;
        d0[0] = d0[1] = d1[0] = d1[1] = v;
      }
  }
  Tape* tape = Tape::active();
  if (detail::tracked(x, tape)) {
    detail::mark_output(out, tape);
    Tensor in = x;
    tape->record({in}, [=]() mutable {
      const double* go = out.grad_vec().data();
      double* gi = in.grad();
      for (std::int64_t p = 0; p < static_cast<std::int64_t>(n) * c; ++p) {
        const double* gsrc = go + p * 4 * h * w;
        double* gdst = gi + p * h * w;
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx) {
            const double* g0 = gsrc + (2 * y) * (2 * w) + 2 * xx;
            const double* g1 = g0 + 2 * w;
            gdst[y * w + xx] += g0[0] + g0[1] + g1[0] + g1[1];
          }
      }
    });
  }
  return out;
}

// 2x2 average-pool downsampling (stride 2); trailing odd row/column ignored.
inline Tensor downsample2x(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("downsample2x: expected [N,C,H,W]");
  const int n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h < 2 || w < 2) throw ShapeError("downsample2x: spatial size must be >= 2");
  const int oh = h / 2, ow = w / 2;
  Tensor out({n, c, oh, ow});
  const double* px = x.data();
  double* po = out.data();
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(n) * c; ++p) {
    const double* src = px + p * h * w;
    double* dst = po + p * oh * ow;
    for (int y = 0; y < oh; ++y)
      for (int xx = 0; xx < ow; ++xx) {
        const double* s0 = src + (2 * y) * w + 2 * xx;
        const double* s1 = s0 + w;
        dst[y * ow + xx] = 0.25 * (s0[0] + s0[1] + s1[0] + s1[1]);
      }
  }
  Tape* tape = Tape::active();
  if (detail::tracked(x, tape)) {
    detail::mark_output(out, tape);
    Tensor in = x;
    tape->record({in}, [=]() mutable {
      const double* go = out.grad_vec().data();
      double* gi = in.grad();
      for (std::int64_t p = 0; p < static_cast<std::int64_t>(n) * c; ++p) {
        const double* gsrc = go + p * oh * ow;
        double* gdst = gi + p * h * w;
        for (int y = 0; y < oh; ++y)
          for (int xx = 0; xx < ow; ++xx) {
            const double g = 0.25 * gsrc[y * ow + xx];
            double* d0 = gdst + (2 * y) * w + 2 * xx;
            double* d1 = d0 + w;
            d0[0] += g;
            d0[1] += g;
            d1[0] += g;
            d1[1] += g;
          }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape plumbing

inline Tensor reshape(const Tensor& x, Shape new_shape) {
  if (numel_of(new_shape) != x.numel())
    throw ShapeError("reshape: element count mismatch " + shape_str(x.shape()) + " -> " +
                     shape_str(new_shape));
  Tensor out = Tensor::from_vector(std::move(new_shape), x.vec());
  Tape* tape = Tape::active();
  if (detail::tracked(x, tape)) {
    detail::mark_output(out, tape);
    Tensor in = x;
    tape->record({in}, [=]() mutable {
      const double* go = out.grad_vec().data();
      double* gi = in.grad();
      const std::int64_t m = in.numel();
      for (std::int64_t i = 0; i < m; ++i) gi[i] += go[i];
    });
  }
  return out;
}

// Copy of a contiguous flat range, viewed with a new shape.
inline Tensor slice_flat(const Tensor& x, std::int64_t offset, Shape new_shape) {
  const std::int64_t count = numel_of(new_shape);
  if (offset < 0 || offset + count > x.numel())
    throw ShapeError("slice_flat: range out of bounds");
  std::vector<double> vals(x.vec().begin() + offset, x.vec().begin() + offset + count);
  Tensor out = Tensor::from_vector(std::move(new_shape), std::move(vals));
  Tape* tape = Tape::active();
  if (detail::tracked(x, tape)) {
    detail::mark_output(out, tape);
    Tensor in = x;
    tape->record({in}, [=]() mutable {
      const double* go = out.grad_vec().data();
      double* gi = in.grad() + offset;
      for (std::int64_t i = 0; i < count; ++i) gi[i] += go[i];
    });
  }
  return out;
}

// One sample of a batch as [1,C,H,W].
inline Tensor slice_batch(const Tensor& x, int index) {
  if (x.rank() != 4) throw ShapeError("slice_batch: expected [N,C,H,W]");
  if (index < 0 || index >= x.dim(0)) throw ShapeError("slice_batch: index out of range");
  const std::int64_t sample = x.numel() / x.dim(0);
  return slice_flat(x, sample * index, {1, x.dim(1), x.dim(2), x.dim(3)});
}

inline Tensor concat_batch(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_batch: no parts");
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 4) throw ShapeError("concat_batch: expected [N,C,H,W] parts");
    if (p.dim(1) != parts[0].dim(1) || p.dim(2) != parts[0].dim(2) ||
        p.dim(3) != parts[0].dim(3))
      throw ShapeError("concat_batch: mismatched part shapes");
    total += p.dim(0);
  }
  Tensor out({total, parts[0].dim(1), parts[0].dim(2), parts[0].dim(3)});
  double* po = out.data();
  std::int64_t off = 0;
  for (const auto& p : parts) {
    std::memcpy(po + off, p.data(), sizeof(double) * static_cast<size_t>(p.numel()));
    off += p.numel();
  }
  Tape* tape = Tape::active();
  bool any = false;
  for (const auto& p : parts) any = any || detail::tracked(p, tape);
  if (any) {
    detail::mark_output(out, tape);
    std::vector<Tensor> ins = parts;
    tape->record(ins, [=]() mutable {
      const double* go = out.grad_vec().data();
      std::int64_t o2 = 0;
      for (auto& p : ins) {
        double* gp = p.grad();
        const std::int64_t m = p.numel();
        for (std::int64_t i = 0; i < m; ++i) gp[i] += go[o2 + i];
        o2 += m;
      }
    });
  }
  return out;
}

inline Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.rank() != 4 || b.rank() != 4) throw ShapeError("concat_channels: expected rank 4");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat_channels: mismatched shapes");
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(a.dim(2)) * a.dim(3);
  Tensor out({n, ca + cb, a.dim(2), a.dim(3)});
  double* po = out.data();
  const double* pa = a.data();
  const double* pb = b.data();
  for (int i = 0; i < n; ++i) {
    std::memcpy(po + (static_cast<std::int64_t>(i) * (ca + cb)) * plane,
                pa + static_cast<std::int64_t>(i) * ca * plane,
                sizeof(double) * static_cast<size_t>(ca * plane));
    std::memcpy(po + (static_cast<std::int64_t>(i) * (ca + cb) + ca) * plane,
                pb + static_cast<std::int64_t>(i) * cb * plane,
                sizeof(double) * static_cast<size_t>(cb * plane));
  }
  Tape* tape = Tape::active();
  const bool ta = detail::tracked(a, tape), tb = detail::tracked(b, tape);
  if (ta || tb) {
    detail::mark_output(out, tape);
    Tensor ia = a, ib = b;
    tape->record({ia, ib}, [=]() mutable {
      const double* go = out.grad_vec().data();
      for (int i = 0; i < n; ++i) {
        if (ta) {
          double* ga = ia.grad() + static_cast<std::int64_t>(i) * ca * plane;
          const double* g = go + (static_cast<std::int64_t>(i) * (ca + cb)) * plane;
          for (std::int64_t j = 0; j < ca * plane; ++j) ga[j] += g[j];
        }
        if (tb) {
          double* gb = ib.grad() + static_cast<std::int64_t>(i) * cb * plane;
          const double* g = go + (static_cast<std::int64_t>(i) * (ca + cb) + ca) * plane;
          for (std::int64_t j = 0; j < cb * plane; ++j) gb[j] += g[j];
        }
      }
    });
  }
  return out;
}

// Multiply by a one-element tensor (differentiable scalar scaling).
inline Tensor scale_by(const Tensor& x, const Tensor& s) {
  if (s.numel() != 1) throw ShapeError("scale_by: scale must be a one-element tensor");
  Tensor out(x.shape());
  const double sv = s.vec()[0];
  const double* px = x.data();
  double* po = out.data();
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] * sv;
  check_finite(out, "scale_by");
  Tape* tape = Tape::active();
  const bool tx = detail::tracked(x, tape), ts = detail::tracked(s, tape);
  if (tx || ts) {
    detail::mark_output(out, tape);
    Tensor ix = x, is = s;
    tape->record({ix, is}, [=]() mutable {
      const double* go = out.grad_vec().data();
      const double* xv = ix.data();
      const double sc = is.vec()[0];
      double* gx = tx ? ix.grad() : nullptr;
      double acc = 0.0;
      for (std::int64_t i = 0; i < n; ++i) {
        if (gx) gx[i] += go[i] * sc;
        acc += go[i] * xv[i];
      }
      if (ts) is.grad()[0] += acc;
    });
  }
  return out;
}

// x[N,C,H,W] * s[N,C], each channel plane scaled by its gate value.
inline Tensor scale_channels(const Tensor& x, const Tensor& s) {
  if (x.rank() != 4 || s.rank() != 2 || x.dim(0) != s.dim(0) || x.dim(1) != s.dim(1))
    throw ShapeError("scale_channels: expected x[N,C,H,W], s[N,C]");
  const int n = x.dim(0), c = x.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  Tensor out(x.shape());
  const double* px = x.data();
  const double* ps = s.data();
  double* po = out.data();
  for (std::int64_t p = 0; p < static_cast<std::int64_t>(n) * c; ++p) {
    const double g = ps[p];
    const double* xp = px + p * plane;
    double* op = po + p * plane;
    for (std::int64_t j = 0; j < plane; ++j) op[j] = xp[j] * g;
  }
  check_finite(out, "scale_channels");
  Tape* tape = Tape::active();
  const bool tx = detail::tracked(x, tape), ts = detail::tracked(s, tape);
  if (tx || ts) {
    detail::mark_output(out, tape);
    Tensor ix = x, is = s;
    tape->record({ix, is}, [=]() mutable {
      const double* go = out.grad_vec().data();
      const double* xv = ix.data();
      const double* sv = is.data();
      double* gx = tx ? ix.grad() : nullptr;
      double* gs = ts ? is.grad() : nullptr;
      for (std::int64_t p = 0; p < static_cast<std::int64_t>(n) * c; ++p) {
        const double g = sv[p];
        const std::int64_t base = p * plane;
        if (gx)
          for (std::int64_t j = 0; j < plane; ++j) gx[base + j] += go[base + j] * g;
        if (gs) gs[p] += detail::dot4(go + base, xv + base, static_cast<int>(plane));
      }
    });
  }
  return out;
}

// x[N,C,H,W] * map[N,1,H,W], the map broadcast across channels.
inline Tensor broadcast_mul_map(const Tensor& x, const Tensor& m) {
  if (x.rank() != 4 || m.rank() != 4 || m.dim(1) != 1)
    throw ShapeError("broadcast_mul_map: expected x[N,C,H,W], map[N,1,H,W]");
  if (x.dim(0) != m.dim(0) || x.dim(2) != m.dim(2) || x.dim(3) != m.dim(3))
    throw ShapeError("broadcast_mul_map: spatial mismatch");
  const int n = x.dim(0), c = x.dim(1);
  const std::int64_t plane = static_cast<std::int64_t>(x.dim(2)) * x.dim(3);
  Tensor out(x.shape());
  const double* px = x.data();
  const double* pm = m.data();
  double* po = out.data();
  for (int i = 0; i < n; ++i) {
    const double* mp = pm + static_cast<std::int64_t>(i) * plane;
    for (int ch = 0; ch < c; ++ch) {
      const double* xp = px + (static_cast<std::int64_t>(i) * c + ch) * plane;
      double* op = po + (static_cast<std::int64_t>(i) * c + ch) * plane;
      for (std::int64_t j = 0; j < plane; ++j) op[j] = xp[j] * mp[j];
    }
  }
  check_finite(out, "broadcast_mul_map");
  Tape* tape = Tape::active();
  const bool tx = detail::tracked(x, tape), tm = detail::tracked(m, tape);
  if (tx || tm) {
    detail::mark_output(out, tape);
    Tensor ix = x, im = m;
    tape->record({ix, im}, [=]() mutable {
      const double* go = out.grad_vec().data();
      const double* xv = ix.data();
      const double* mv = im.data();
      double* gx = tx ? ix.grad() : nullptr;
      double* gm = tm ? im.grad() : nullptr;
      for (int i = 0; i < n; ++i) {
        const double* mp = mv + static_cast<std::int64_t>(i) * plane;
        double* gmp = gm ? gm + static_cast<std::int64_t>(i) * plane : nullptr;
        for (int ch = 0; ch < c; ++ch) {
          const std::int64_t base = (static_cast<std::int64_t>(i) * c + ch) * plane;
          const double* g = go + base;
          const double* xp = xv + base;
          if (gx) {
            double* gxp = gx + base;
            for (std::int64_t j = 0; j < plane; ++j) gxp[j] += g[j] * mp[j];
          }
          if (gmp)
            for (std::int64_t j = 0; j < plane; ++j) gmp[j] += g[j] * xp[j];
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Initializers

inline void fill_uniform(Tensor& t, Rng& rng, double lo, double hi) {
  for (double& v : t.vec()) v = lo + (hi - lo) * rng.uniform();
}

inline void fill_normal(Tensor& t, Rng& rng, double mean_v, double stddev) {
  for (double& v : t.vec()) v = mean_v + stddev * rng.normal();
}

// Kaiming-style init for a conv/fc weight given its fan-in.
inline void fill_he(Tensor& t, Rng& rng, int fan_in, double gain = 1.0) {
  const double stddev = gain * std::sqrt(2.0 / static_cast<double>(fan_in));
  fill_normal(t, rng, 0.0, stddev);
}

}  // namespace gupdm
