#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "segadapt/tensor.hpp"

namespace segadapt {

// Differentiable layers over N x C x H x W tensors. Every op computes its
// output eagerly and, when any input requires a gradient, records a backward
// closure on the graph.

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

namespace detail {

template <typename Scalar, typename Bits>
void note_mask(Graph<Scalar>& g, const Bits& bits, Index n) {
  std::uint64_t word = 0;
  for (Index i = 0; i < n; ++i) {
    word = (word << 1) | std::uint64_t(bits(i));
    if (i % 64 == 63 || i == n - 1) {
      g.note_branch(word);
      word = 0;
    }
  }
}

template <typename Scalar>
bool any_requires_grad(std::initializer_list<const Tensor<Scalar>*> ts) {
  for (auto* t : ts) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

template <typename Scalar>
bool wants_grad(const Tensor<Scalar>& t) {
  return t.defined() && t.requires_grad();
}

}  // namespace detail

enum class Padding { Same, Valid };

struct Conv2dOptions {
  int stride = 1;
  Padding padding = Padding::Same;
};

/// Cross-correlation with square kernels, computed as a GEMM over an
/// im2col patch matrix. w is (c_out, c_in, k, k); b is (c_out) or undefined.
template <typename Scalar>
Tensor<Scalar> conv2d(Graph<Scalar>& g, const Tensor<Scalar>& x, const Tensor<Scalar>& w,
                      const Tensor<Scalar>& b, Conv2dOptions opt = {}) {
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (ws.rank() != 4 || ws[2] != ws[3]) throw Error(Errc::ShapeMismatch, "conv weight must be (c_out,c_in,k,k)");
  const Index n = xs.n(), cin = xs.c(), h = xs.h(), wd = xs.w();
  const Index cout = ws[0], k = ws[2];
  if (ws[1] != cin) {
    throw Error(Errc::ShapeMismatch, "conv expects " + std::to_string(ws[1]) + " input channels, got " +
                                         std::to_string(cin));
  }
  if (b.defined() && !(b.shape() == Shape{cout})) throw Error(Errc::ShapeMismatch, "conv bias must be (c_out)");
  if (opt.stride < 1) throw Error(Errc::ShapeMismatch, "stride must be >= 1");
  const Index pad = opt.padding == Padding::Same ? (k - 1) / 2 : 0;
  const Index s = opt.stride;
  if (h + 2 * pad < k || wd + 2 * pad < k) throw Error(Errc::ShapeMismatch, "input smaller than kernel");
  const Index oh = (h + 2 * pad - k) / s + 1;
  const Index ow = (wd + 2 * pad - k) / s + 1;
  const Index kk = cin * k * k;
  const Index p = oh * ow;

  const bool rg = detail::any_requires_grad({&x, &w, &b});
  Tensor<Scalar> out(Shape{n, cout, oh, ow}, Scalar(0), rg);
  auto cols = std::make_shared<std::vector<RowMatrix<Scalar>>>(std::size_t(n));
  Eigen::Map<const RowMatrix<Scalar>> wmat(w.data(), cout, kk);

  for (Index i = 0; i < n; ++i) {
    auto& c = (*cols)[std::size_t(i)];
    c.setZero(kk, p);
    const Scalar* xi = x.data() + i * cin * h * wd;
    for (Index ci = 0; ci < cin; ++ci) {
      for (Index ky = 0; ky < k; ++ky) {
        for (Index kx = 0; kx < k; ++kx) {
          Scalar* row = c.data() + ((ci * k + ky) * k + kx) * p;
          for (Index oy = 0; oy < oh; ++oy) {
            const Index iy = oy * s - pad + ky;
            if (iy < 0 || iy >= h) continue;
            const Scalar* src = xi + (ci * h + iy) * wd;
            for (Index ox = 0; ox < ow; ++ox) {
              const Index ix = ox * s - pad + kx;
              if (ix >= 0 && ix < wd) row[oy * ow + ox] = src[ix];
            }
          }
        }
      }
    }
    Eigen::Map<RowMatrix<Scalar>> o(out.data() + i * cout * p, cout, p);
    o.noalias() = wmat * c;
    if (b.defined()) o.colwise() += b.value();
  }
  ensure_finite(out, "conv2d");

  if (rg) {
    g.record([x, w, b, out, cols, n, cin, h, wd, cout, k, s, pad, oh, ow, kk, p]() mutable {
      if (!out.has_grad()) return;
      Eigen::Map<const RowMatrix<Scalar>> wmat(w.data(), cout, kk);
      RowMatrix<Scalar> dcols;
      for (Index i = 0; i < n; ++i) {
        Eigen::Map<const RowMatrix<Scalar>> dout(out.grad().data() + i * cout * p, cout, p);
        const auto& c = (*cols)[std::size_t(i)];
        if (w.requires_grad()) {
          Eigen::Map<RowMatrix<Scalar>> dw(w.grad_buffer().data(), cout, kk);
          dw.noalias() += dout * c.transpose();
        }
        if (detail::wants_grad(b)) b.grad_buffer() += dout.rowwise().sum();
        if (x.requires_grad()) {
          dcols.noalias() = wmat.transpose() * dout;
          Scalar* dx = x.grad_buffer().data() + i * cin * h * wd;
          for (Index ci = 0; ci < cin; ++ci) {
            for (Index ky = 0; ky < k; ++ky) {
              for (Index kx = 0; kx < k; ++kx) {
                const Scalar* row = dcols.data() + ((ci * k + ky) * k + kx) * p;
                for (Index oy = 0; oy < oh; ++oy) {
                  const Index iy = oy * s - pad + ky;
                  if (iy < 0 || iy >= h) continue;
                  Scalar* dst = dx + (ci * h + iy) * wd;
                  for (Index ox = 0; ox < ow; ++ox) {
                    const Index ix = ox * s - pad + kx;
                    if (ix >= 0 && ix < wd) dst[ix] += row[oy * ow + ox];
                  }
                }
              }
            }
          }
        }
      }
      cols.reset();
    });
  }
  return out;
}

/// k x k max pooling. Ties go to the first element in row-major order.
template <typename Scalar>
Tensor<Scalar> maxpool2d(Graph<Scalar>& g, const Tensor<Scalar>& x, int k = 2, int stride = 2) {
  const Shape& xs = x.shape();
  const Index n = xs.n(), c = xs.c(), h = xs.h(), w = xs.w();
  if (h % stride != 0 || w % stride != 0) {
    throw Error(Errc::IndivisibleSpatialDims,
                "spatial dims " + xs.str() + " not divisible by stride " + std::to_string(stride));
  }
  const Index oh = h / stride, ow = w / stride;
  Tensor<Scalar> out(Shape{n, c, oh, ow}, Scalar(0), x.requires_grad());
  auto argmax = std::make_shared<std::vector<Index>>(std::size_t(out.size()));
  for (Index plane = 0; plane < n * c; ++plane) {
    const Scalar* src = x.data() + plane * h * w;
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox) {
        Index best = -1;
        Scalar best_v = Scalar(0);
        for (Index ky = 0; ky < k; ++ky) {
          const Index iy = oy * stride + ky;
          if (iy >= h) break;
          for (Index kx = 0; kx < k; ++kx) {
            const Index ix = ox * stride + kx;
            if (ix >= w) break;
            const Scalar v = src[iy * w + ix];
            if (best < 0 || v > best_v) {
              best = iy * w + ix;
              best_v = v;
            }
          }
        }
        const Index o = (plane * oh + oy) * ow + ox;
        out.data()[o] = best_v;
        (*argmax)[std::size_t(o)] = plane * h * w + best;
      }
    }
  }
  if (g.tracking_branches()) {
    for (Index a : *argmax) g.note_branch(std::uint64_t(a));
  }
  if (x.requires_grad()) {
    g.record([x, out, argmax]() mutable {
      if (!out.has_grad()) return;
      auto& dx = x.grad_buffer();
      const auto& dout = out.grad();
      for (Index o = 0; o < dout.size(); ++o) dx((*argmax)[std::size_t(o)]) += dout(o);
    });
  }
  return out;
}

/// Nearest-neighbour upsampling by an integer factor.
template <typename Scalar>
Tensor<Scalar> upsample_nn(Graph<Scalar>& g, const Tensor<Scalar>& x, int factor = 2) {
  if (factor < 1) throw Error(Errc::ShapeMismatch, "upsample factor must be >= 1");
  const Shape& xs = x.shape();
  const Index n = xs.n(), c = xs.c(), h = xs.h(), w = xs.w();
  const Index f = factor, oh = h * f, ow = w * f;
  Tensor<Scalar> out(Shape{n, c, oh, ow}, Scalar(0), x.requires_grad());
  for (Index plane = 0; plane < n * c; ++plane) {
    const Scalar* src = x.data() + plane * h * w;
    Scalar* dst = out.data() + plane * oh * ow;
    for (Index y = 0; y < oh; ++y) {
      for (Index xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[(y / f) * w + xx / f];
    }
  }
  if (x.requires_grad()) {
    g.record([x, out, n, c, h, w, f, oh, ow]() mutable {
      if (!out.has_grad()) return;
      auto& dx = x.grad_buffer();
      for (Index plane = 0; plane < n * c; ++plane) {
        const Scalar* src = out.grad().data() + plane * oh * ow;
        Scalar* dst = dx.data() + plane * h * w;
        for (Index y = 0; y < oh; ++y) {
          for (Index xx = 0; xx < ow; ++xx) dst[(y / f) * w + xx / f] += src[y * ow + xx];
        }
      }
    });
  }
  return out;
}

/// Channel concatenation [a; b].
template <typename Scalar>
Tensor<Scalar> concat_channels(Graph<Scalar>& g, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.n() != bs.n() || as.h() != bs.h() || as.w() != bs.w()) {
    throw Error(Errc::ShapeMismatch, "concat of " + as.str() + " and " + bs.str());
  }
  const Index n = as.n(), ca = as.c(), cb = bs.c(), hw = as.h() * as.w();
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor<Scalar> out(Shape{n, ca + cb, as.h(), as.w()}, Scalar(0), rg);
  for (Index i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ca * hw, ca * hw, out.data() + i * (ca + cb) * hw);
    std::copy_n(b.data() + i * cb * hw, cb * hw, out.data() + i * (ca + cb) * hw + ca * hw);
  }
  if (rg) {
    g.record([a, b, out, n, ca, cb, hw]() mutable {
      if (!out.has_grad()) return;
      const Scalar* d = out.grad().data();
      for (Index i = 0; i < n; ++i) {
        const Scalar* src = d + i * (ca + cb) * hw;
        if (a.requires_grad()) {
          a.grad_buffer().segment(i * ca * hw, ca * hw) +=
              Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(src, ca * hw);
        }
        if (b.requires_grad()) {
          b.grad_buffer().segment(i * cb * hw, cb * hw) +=
              Eigen::Map<const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>>(src + ca * hw, cb * hw);
        }
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> leaky_relu(Graph<Scalar>& g, const Tensor<Scalar>& x, Scalar slope) {
  if (g.tracking_branches()) detail::note_mask(g, (x.value().array() > Scalar(0)).eval(), x.size());
  Tensor<Scalar> out(x.shape(), (x.value().array() > Scalar(0)).select(x.value().array(), slope * x.value().array()).matrix(),
                     x.requires_grad());
  if (x.requires_grad()) {
    g.record([x, out, slope]() mutable {
      if (!out.has_grad()) return;
      x.grad_buffer().array() +=
          (x.value().array() > Scalar(0)).select(out.grad().array(), slope * out.grad().array());
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> relu(Graph<Scalar>& g, const Tensor<Scalar>& x) {
  return leaky_relu(g, x, Scalar(0));
}

template <typename Scalar>
Scalar stable_sigmoid(Scalar z) {
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + std::exp(-z));
  const Scalar e = std::exp(z);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
Tensor<Scalar> sigmoid(Graph<Scalar>& g, const Tensor<Scalar>& x) {
  Tensor<Scalar> out(x.shape(), x.value().unaryExpr([](Scalar z) { return stable_sigmoid(z); }).eval(),
                     x.requires_grad());
  if (x.requires_grad()) {
    g.record([x, out]() mutable {
      if (!out.has_grad()) return;
      const auto& y = out.value().array();
      x.grad_buffer().array() += out.grad().array() * y * (Scalar(1) - y);
    });
  }
  return out;
}

/// Softmax across channels at every pixel, with max subtraction.
template <typename Scalar>
Tensor<Scalar> softmax_channels(Graph<Scalar>& g, const Tensor<Scalar>& x) {
  const Shape& xs = x.shape();
  const Index n = xs.n(), c = xs.c(), hw = xs.h() * xs.w();
  Tensor<Scalar> out(xs, Scalar(0), x.requires_grad());
  for (Index i = 0; i < n; ++i) {
    const Scalar* src = x.data() + i * c * hw;
    Scalar* dst = out.data() + i * c * hw;
    for (Index px = 0; px < hw; ++px) {
      Scalar m = src[px];
      for (Index ch = 1; ch < c; ++ch) m = std::max(m, src[ch * hw + px]);
      Scalar sum = 0;
      for (Index ch = 0; ch < c; ++ch) {
        const Scalar e = std::exp(src[ch * hw + px] - m);
        dst[ch * hw + px] = e;
        sum += e;
      }
      for (Index ch = 0; ch < c; ++ch) dst[ch * hw + px] /= sum;
    }
  }
  if (x.requires_grad()) {
    g.record([x, out, n, c, hw]() mutable {
      if (!out.has_grad()) return;
      auto& dx = x.grad_buffer();
      for (Index i = 0; i < n; ++i) {
        const Scalar* y = out.data() + i * c * hw;
        const Scalar* dy = out.grad().data() + i * c * hw;
        Scalar* d = dx.data() + i * c * hw;
        for (Index px = 0; px < hw; ++px) {
          Scalar dot = 0;
          for (Index ch = 0; ch < c; ++ch) dot += y[ch * hw + px] * dy[ch * hw + px];
          for (Index ch = 0; ch < c; ++ch) d[ch * hw + px] += y[ch * hw + px] * (dy[ch * hw + px] - dot);
        }
      }
    });
  }
  return out;
}

/// (n, c, h, w) -> (n, c, 1, 1) spatial mean.
template <typename Scalar>
Tensor<Scalar> global_avg_pool(Graph<Scalar>& g, const Tensor<Scalar>& x) {
  const Shape& xs = x.shape();
  const Index nc = xs.n() * xs.c(), hw = xs.h() * xs.w();
  Eigen::Map<const RowMatrix<Scalar>> planes(x.data(), nc, hw);
  Tensor<Scalar> out(Shape{xs.n(), xs.c(), 1, 1}, planes.rowwise().mean().eval(), x.requires_grad());
  if (x.requires_grad()) {
    g.record([x, out, nc, hw]() mutable {
      if (!out.has_grad()) return;
      Eigen::Map<RowMatrix<Scalar>> dx(x.grad_buffer().data(), nc, hw);
      dx.colwise() += out.grad() / Scalar(hw);
    });
  }
  return out;
}

/// Elementwise sum of two same-shaped tensors.
template <typename Scalar>
Tensor<Scalar> add(Graph<Scalar>& g, const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  if (!(a.shape() == b.shape())) throw Error(Errc::ShapeMismatch, "add of " + a.shape().str() + " and " + b.shape().str());
  const bool rg = a.requires_grad() || b.requires_grad();
  Tensor<Scalar> out(a.shape(), (a.value() + b.value()).eval(), rg);
  if (rg) {
    g.record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      if (a.requires_grad()) a.grad_buffer() += out.grad();
      if (b.requires_grad()) b.grad_buffer() += out.grad();
    });
  }
  return out;
}

/// sum_i coeffs_i * x_i as a scalar; coeffs are constants.
template <typename Scalar>
Tensor<Scalar> weighted_sum(Graph<Scalar>& g, const Tensor<Scalar>& x,
                            const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& coeffs) {
  if (coeffs.size() != x.size()) throw Error(Errc::ShapeMismatch, "coefficient count differs from " + x.shape().str());
  Tensor<Scalar> out(Shape{}, x.value().dot(coeffs), x.requires_grad());
  if (x.requires_grad()) {
    g.record([x, out, coeffs]() mutable {
      if (!out.has_grad()) return;
      x.grad_buffer() += out.grad()(0) * coeffs;
    });
  }
  return out;
}

/// Weighted softmax cross-entropy:
///   L = sum_p w_p * -log softmax(logits)_{y_p}(p) / sum_p w_p
/// targets and weights are (n, h, w) planes flattened row-major. Weights are
/// constants. Sums are accumulated in double.
template <typename Scalar>
Tensor<Scalar> weighted_cross_entropy(Graph<Scalar>& g, const Tensor<Scalar>& logits,
                                      std::span<const std::uint8_t> targets, std::span<const Scalar> weights) {
  const Shape& ls = logits.shape();
  const Index n = ls.n(), c = ls.c(), hw = ls.h() * ls.w();
  if (Index(targets.size()) != n * hw || Index(weights.size()) != n * hw) {
    throw Error(Errc::ShapeMismatch, "targets/weights do not match logits " + ls.str());
  }
  double wsum = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= c) throw Error(Errc::LabelOutOfRange, "target label " + std::to_string(targets[i]));
    if (!(weights[i] >= Scalar(0)) || !std::isfinite(double(weights[i]))) {
      throw Error(Errc::InvariantViolation, "weights must be finite and non-negative");
    }
    wsum += double(weights[i]);
  }
  if (wsum <= 0.0) throw Error(Errc::AllZeroWeights, "weight map sums to zero");

  auto probs = std::make_shared<std::vector<Scalar>>(std::size_t(logits.size()));
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const Scalar* l = logits.data() + i * c * hw;
    Scalar* pr = probs->data() + i * c * hw;
    for (Index px = 0; px < hw; ++px) {
      double m = double(l[px]);
      for (Index ch = 1; ch < c; ++ch) m = std::max(m, double(l[ch * hw + px]));
      double sum = 0.0;
      for (Index ch = 0; ch < c; ++ch) sum += std::exp(double(l[ch * hw + px]) - m);
      const double lse = m + std::log(sum);
      for (Index ch = 0; ch < c; ++ch) pr[ch * hw + px] = Scalar(std::exp(double(l[ch * hw + px]) - lse));
      const std::size_t t = std::size_t(i * hw + px);
      total += double(weights[t]) * (lse - double(l[Index(targets[t]) * hw + px]));
    }
  }
  Tensor<Scalar> out(Shape{}, Scalar(total / wsum), logits.requires_grad());
  ensure_finite(out, "weighted_cross_entropy");
  if (logits.requires_grad()) {
    std::vector<std::uint8_t> tgt(targets.begin(), targets.end());
    std::vector<Scalar> wts(weights.begin(), weights.end());
    g.record([logits, out, probs, tgt = std::move(tgt), wts = std::move(wts), n, c, hw, wsum]() mutable {
      if (!out.has_grad()) return;
      const double up = double(out.grad()(0));
      auto& dl = logits.grad_buffer();
      for (Index i = 0; i < n; ++i) {
        for (Index px = 0; px < hw; ++px) {
          const std::size_t t = std::size_t(i * hw + px);
          const double scale = up * double(wts[t]) / wsum;
          if (scale == 0.0) continue;
          for (Index ch = 0; ch < c; ++ch) {
            const Index at = (i * c + ch) * hw + px;
            const double onehot = ch == Index(tgt[t]) ? 1.0 : 0.0;
            dl(at) += Scalar(scale * (double((*probs)[std::size_t(at)]) - onehot));
          }
        }
      }
    });
  }
  return out;
}

/// Mean binary cross-entropy over one logit per sample, in the stable
/// max(z,0) - z*t + log(1 + exp(-|z|)) form.
template <typename Scalar>
Tensor<Scalar> bce_with_logits(Graph<Scalar>& g, const Tensor<Scalar>& logits, std::span<const Scalar> targets) {
  const Index n = logits.size();
  if (Index(targets.size()) != n) throw Error(Errc::ShapeMismatch, "one target per logit required");
  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double z = double(logits.value()(i));
    const double t = double(targets[std::size_t(i)]);
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
  }
  Tensor<Scalar> out(Shape{}, Scalar(total / double(n)), logits.requires_grad());
  if (logits.requires_grad()) {
    std::vector<Scalar> tgt(targets.begin(), targets.end());
    g.record([logits, out, tgt = std::move(tgt), n]() mutable {
      if (!out.has_grad()) return;
      const Scalar up = out.grad()(0);
      auto& dl = logits.grad_buffer();
      for (Index i = 0; i < n; ++i) {
        dl(i) += up * (stable_sigmoid(logits.value()(i)) - tgt[std::size_t(i)]) / Scalar(n);
      }
    });
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> bce_with_logits(Graph<Scalar>& g, const Tensor<Scalar>& logit, Scalar target) {
  return bce_with_logits(g, logit, std::span<const Scalar>(&target, 1));
}

}  // namespace segadapt
