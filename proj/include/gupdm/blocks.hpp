#pragma once

// Network building blocks: dynamic convolution (attention-mixed parallel
// kernels), hyper residual block (conv weights generated from a conditioning
// vector), multi-scale feature extraction with channel attention, and the
// transmission gate.

#include <string>
#include <utility>
#include <vector>

#include "gupdm/errors.hpp"
#include "gupdm/rng.hpp"
#include "gupdm/tensor.hpp"

namespace gupdm {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {
inline Tensor concat_cols(const Tensor& a, const Tensor& b) {
  // [N,Ca] ++ [N,Cb] -> [N,Ca+Cb]
  Tensor a4 = reshape(a, {a.dim(0), a.dim(1), 1, 1});
  Tensor b4 = reshape(b, {b.dim(0), b.dim(1), 1, 1});
  Tensor cat = concat_channels(a4, b4);
  return reshape(cat, {a.dim(0), a.dim(1) + b.dim(1)});
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Dynamic convolution: K parallel kernels mixed by an input-conditioned
// attention simplex, then a single convolution with the mixed kernel.
struct DynamicConv {
  int in_channels = 0, out_channels = 0, kernel = 3, num_kernels = 4;

  std::vector<Tensor> kernels;  // K x [O,C,k,k]
  std::vector<Tensor> biases;   // K x [O]
  Tensor attn_w1, attn_b1;      // [C,hidden], [hidden]
  Tensor attn_w2, attn_b2;      // [hidden,K], [K]

  DynamicConv() = default;
  DynamicConv(int in_ch, int out_ch, int k, int k_count, int attn_reduction, Rng& rng)
      : in_channels(in_ch), out_channels(out_ch), kernel(k), num_kernels(k_count) {
    if (k_count < 2) throw ConfigError("dynamic conv: needs at least 2 kernels");
    const int hidden = std::max(1, in_ch / attn_reduction);
    for (int i = 0; i < k_count; ++i) {
      Tensor w({out_ch, in_ch, k, k});
      fill_he(w, rng, in_ch * k * k);
      kernels.push_back(w);
      biases.emplace_back(Shape{out_ch}, 0.0);
    }
    attn_w1 = Tensor({in_ch, hidden});
    fill_he(attn_w1, rng, in_ch);
    attn_b1 = Tensor({hidden}, 0.0);
    attn_w2 = Tensor({hidden, k_count});
    fill_he(attn_w2, rng, hidden);
    attn_b2 = Tensor({k_count}, 0.0);
  }

  // Per-sample mixing weights over the K kernels; sums to 1.
  Tensor attention(const Tensor& x) const {
    Tensor pooled = global_avg_pool(x);  // [N,C]
    Tensor h = relu(fc(pooled, attn_w1, attn_b1));
    return softmax(fc(h, attn_w2, attn_b2));  // [N,K]
  }

  Tensor forward(const Tensor& x) const {
    if (x.dim(1) != in_channels) throw ShapeError("dynamic conv: channel mismatch");
    Tensor pi = attention(x);  // [N,K]
    const int n = x.dim(0);
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      Tensor xi = slice_batch(x, i);
      Tensor w_eff, b_eff;
      for (int k = 0; k < num_kernels; ++k) {
        Tensor pik = slice_flat(pi, static_cast<std::int64_t>(i) * num_kernels + k, {1});
        Tensor wk = scale_by(kernels[static_cast<size_t>(k)], pik);
        Tensor bk = scale_by(biases[static_cast<size_t>(k)], pik);
        w_eff = k == 0 ? wk : add(w_eff, wk);
        b_eff = k == 0 ? bk : add(b_eff, bk);
      }
      outs.push_back(conv2d(xi, w_eff, b_eff, 1, kernel / 2));
    }
    return concat_batch(outs);
  }

  void collect(const std::string& prefix, NamedTensors& out) {
    for (size_t k = 0; k < kernels.size(); ++k) {
      out.emplace_back(prefix + ".kernel" + std::to_string(k), kernels[k]);
      out.emplace_back(prefix + ".bias" + std::to_string(k), biases[k]);
    }
    out.emplace_back(prefix + ".attn_w1", attn_w1);
    out.emplace_back(prefix + ".attn_b1", attn_b1);
    out.emplace_back(prefix + ".attn_w2", attn_w2);
    out.emplace_back(prefix + ".attn_b2", attn_b2);
  }
};

// ---------------------------------------------------------------------------
// Hyper residual block: y = x + conv(relu(conv(x, W1, b1)), W2, b2) where the
// weights come from an fc layer applied to a conditioning vector. In static
// mode (hypernetwork ablated) the same convs are direct parameters.
struct HyperResBlock {
  int channels = 0, cond_dim = 0, kernel = 3;
  bool hyper = true;

  Tensor fc_w, fc_b;          // hyper mode: [D,P], [P]
  Tensor w1, b1, w2, b2;      // static mode

  HyperResBlock() = default;
  HyperResBlock(int ch, int cond, int k, Rng& rng, bool hyper_mode = true)
      : channels(ch), cond_dim(cond), kernel(k), hyper(hyper_mode) {
    const int conv_count = ch * ch * k * k;
    if (hyper) {
      const int p = generated_count();
      fc_w = Tensor({cond, p});
      fill_normal(fc_w, rng, 0.0, 0.01 / std::sqrt(static_cast<double>(cond)));
      fc_b = Tensor({p}, 0.0);
      // the bias carries the conditioning-independent part of the generated
      // convs; seed the first conv, keep the second small
      Rng sub = rng.child(17);
      const double he1 = std::sqrt(2.0 / static_cast<double>(ch * k * k));
      for (int i = 0; i < conv_count; ++i) fc_b.data()[i] = 0.5 * he1 * sub.normal();
      for (int i = 0; i < conv_count; ++i)
        fc_b.data()[conv_count + ch + i] = 0.05 * he1 * sub.normal();
    } else {
      w1 = Tensor({ch, ch, k, k});
      fill_he(w1, rng, ch * k * k, 0.5);
      b1 = Tensor({ch}, 0.0);
      w2 = Tensor({ch, ch, k, k});
      fill_he(w2, rng, ch * k * k, 0.05);
      b2 = Tensor({ch}, 0.0);
    }
  }

  int generated_count() const { return 2 * channels * channels * kernel * kernel + 2 * channels; }

  Tensor forward(const Tensor& x, const Tensor& cond) const {
    if (x.dim(1) != channels) throw ShapeError("hyper res block: channel mismatch");
    const int pad = kernel / 2;
    if (!hyper) {
      Tensor h = relu(conv2d(x, w1, b1, 1, pad));
      return add(x, conv2d(h, w2, b2, 1, pad));
    }
    if (cond.rank() != 2 || cond.dim(1) != cond_dim)
      throw ShapeError("hyper res block: conditioning vector length mismatch");
    if (cond.dim(0) != x.dim(0))
      throw ShapeError("hyper res block: conditioning batch mismatch");
    const int n = x.dim(0);
    const int conv_count = channels * channels * kernel * kernel;
    std::vector<Tensor> outs;
    outs.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      Tensor ci = slice_flat(cond, static_cast<std::int64_t>(i) * cond_dim, {1, cond_dim});
      Tensor gen = fc(ci, fc_w, fc_b);  // [1,P]
      std::int64_t off = 0;
      Tensor gw1 = slice_flat(gen, off, {channels, channels, kernel, kernel});
      off += conv_count;
      Tensor gb1 = slice_flat(gen, off, {channels});
      off += channels;
      Tensor gw2 = slice_flat(gen, off, {channels, channels, kernel, kernel});
      off += conv_count;
      Tensor gb2 = slice_flat(gen, off, {channels});
      Tensor xi = slice_batch(x, i);
      Tensor h = relu(conv2d(xi, gw1, gb1, 1, pad));
      outs.push_back(add(xi, conv2d(h, gw2, gb2, 1, pad)));
    }
    return concat_batch(outs);
  }

  void collect(const std::string& prefix, NamedTensors& out) {
    if (hyper) {
      out.emplace_back(prefix + ".fc_w", fc_w);
      out.emplace_back(prefix + ".fc_b", fc_b);
    } else {
      out.emplace_back(prefix + ".w1", w1);
      out.emplace_back(prefix + ".b1", b1);
      out.emplace_back(prefix + ".w2", w2);
      out.emplace_back(prefix + ".b2", b2);
    }
  }

  void zero_generator() {
    if (hyper) {
      std::fill(fc_w.vec().begin(), fc_w.vec().end(), 0.0);
      std::fill(fc_b.vec().begin(), fc_b.vec().end(), 0.0);
    }
  }
};

// ---------------------------------------------------------------------------
// Multi-scale feature extraction: 1/3/5 kernel branches, shared channel
// attention from pooled statistics, attention-weighted mean, fusion conv.
struct MultiScaleBlock {
  int channels = 0;

  Tensor w1, b1, w3, b3, w5, b5;
  Tensor attn_w1, attn_b1;  // [2C,hidden]
  Tensor attn_w2, attn_b2;  // [hidden,C]
  Tensor fuse_w, fuse_b;    // 1x1 fusion conv

  MultiScaleBlock() = default;
  MultiScaleBlock(int ch, int attn_reduction, Rng& rng) : channels(ch) {
    auto make_conv = [&](int k, Tensor& w, Tensor& b) {
      w = Tensor({ch, ch, k, k});
      fill_he(w, rng, ch * k * k);
      b = Tensor({ch}, 0.0);
    };
    make_conv(1, w1, b1);
    make_conv(3, w3, b3);
    make_conv(5, w5, b5);
    const int hidden = std::max(1, ch / attn_reduction);
    attn_w1 = Tensor({2 * ch, hidden});
    fill_he(attn_w1, rng, 2 * ch);
    attn_b1 = Tensor({hidden}, 0.0);
    attn_w2 = Tensor({hidden, ch});
    fill_he(attn_w2, rng, hidden);
    attn_b2 = Tensor({ch}, 0.0);
    make_conv(1, fuse_w, fuse_b);
  }

  Tensor branch_attention(const Tensor& feat) const {
    Tensor stats = detail::concat_cols(global_max_pool(feat), global_avg_pool(feat));
    Tensor h = relu(fc(stats, attn_w1, attn_b1));
    return sigmoid(fc(h, attn_w2, attn_b2));  // [N,C] in (0,1)
  }

  Tensor forward(const Tensor& x) const {
    if (x.dim(1) != channels) throw ShapeError("multi-scale block: channel mismatch");
    if (x.dim(2) < 5 || x.dim(3) < 5)
      throw ShapeError("multi-scale block: spatial size must be >= 5");
    Tensor f1 = relu(conv2d(x, w1, b1, 1, 0));
    Tensor f3 = relu(conv2d(x, w3, b3, 1, 1));
    Tensor f5 = relu(conv2d(x, w5, b5, 1, 2));
    Tensor g1 = scale_channels(f1, branch_attention(f1));
    Tensor g3 = scale_channels(f3, branch_attention(f3));
    Tensor g5 = scale_channels(f5, branch_attention(f5));
    Tensor fused = mul_scalar(add(add(g1, g3), g5), 1.0 / 3.0);
    return relu(conv2d(fused, fuse_w, fuse_b, 1, 0));
  }

  void collect(const std::string& prefix, NamedTensors& out) {
    out.emplace_back(prefix + ".w1", w1);
    out.emplace_back(prefix + ".b1", b1);
    out.emplace_back(prefix + ".w3", w3);
    out.emplace_back(prefix + ".b3", b3);
    out.emplace_back(prefix + ".w5", w5);
    out.emplace_back(prefix + ".b5", b5);
    out.emplace_back(prefix + ".attn_w1", attn_w1);
    out.emplace_back(prefix + ".attn_b1", attn_b1);
    out.emplace_back(prefix + ".attn_w2", attn_w2);
    out.emplace_back(prefix + ".attn_b2", attn_b2);
    out.emplace_back(prefix + ".fuse_w", fuse_w);
    out.emplace_back(prefix + ".fuse_b", fuse_b);
  }
};

// ---------------------------------------------------------------------------
// Transmission gate: residual modulation by a single-plane map.
inline Tensor transmission_gate(const Tensor& x, const Tensor& f_m) {
  return add(x, broadcast_mul_map(x, f_m));
}

}  // namespace gupdm
