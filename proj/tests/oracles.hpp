#pragma once
// Slow, obviously-correct reference implementations used to freeze expected
// values independently of the library code.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iterator>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace oracle {

using Index = Eigen::Index;
template <typename T>
using Grid = Eigen::Array<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline Index clamp_index(Index i, Index n) { return std::min(std::max(i, Index(0)), n - 1); }

/// Histogram entropy (bits) of each k x k neighbourhood, edge pixels repeated.
inline Grid<double> entropy(const Grid<std::uint8_t>& labels, int k) {
  const int r = k / 2;
  Grid<double> out(labels.rows(), labels.cols());
  for (Index y = 0; y < labels.rows(); ++y) {
    for (Index x = 0; x < labels.cols(); ++x) {
      std::map<int, int> counts;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          ++counts[labels(clamp_index(y + dy, labels.rows()), clamp_index(x + dx, labels.cols()))];
        }
      }
      double e = 0.0;
      for (const auto& [label, c] : counts) {
        const double p = double(c) / double(k * k);
        e -= p * std::log(p) / std::log(2.0);
      }
      out(y, x) = e;
    }
  }
  return out;
}

/// Squared distance from each foreground pixel to the nearest background
/// pixel by exhaustive scan; background is 0. No background at all gives
/// h^2 + w^2 everywhere.
inline Grid<double> squared_edt(const Grid<std::uint8_t>& fg) {
  const Index h = fg.rows(), w = fg.cols();
  std::vector<std::pair<Index, Index>> background;
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      if (!fg(y, x)) background.emplace_back(y, x);
    }
  }
  Grid<double> out(h, w);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      if (background.empty()) {
        out(y, x) = double(h * h + w * w);
        continue;
      }
      double best = std::numeric_limits<double>::infinity();
      for (const auto& [by, bx] : background) {
        best = std::min(best, double((y - by) * (y - by) + (x - bx) * (x - bx)));
      }
      out(y, x) = best;
    }
  }
  return out;
}

/// Analytic normalized Gaussian taps for offsets -radius..radius.
inline std::vector<double> gaussian_taps(double sigma) {
  const int radius = int(std::ceil(3.0 * sigma));
  std::vector<double> taps;
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps.push_back(std::exp(-double(i * i) / (2.0 * sigma * sigma)));
    sum += taps.back();
  }
  for (double& t : taps) t /= sum;
  return taps;
}

/// Dense 2D convolution with the outer-product kernel, clamp-to-edge.
inline Grid<double> gaussian_2d(const Grid<double>& in, double sigma) {
  const auto taps = gaussian_taps(sigma);
  const int r = int(taps.size() / 2);
  Grid<double> out(in.rows(), in.cols());
  for (Index y = 0; y < in.rows(); ++y) {
    for (Index x = 0; x < in.cols(); ++x) {
      double acc = 0.0;
      for (int dy = -r; dy <= r; ++dy) {
        for (int dx = -r; dx <= r; ++dx) {
          acc += taps[std::size_t(dy + r)] * taps[std::size_t(dx + r)] *
                 in(clamp_index(y + dy, in.rows()), clamp_index(x + dx, in.cols()));
        }
      }
      out(y, x) = acc;
    }
  }
  return out;
}

/// Direct nested-loop cross-correlation. x: (n,cin,h,w), w: (cout,cin,k,k),
/// zero padding `pad`, stride `s`. Returns (n,cout,oh,ow) flattened.
inline std::vector<double> conv2d(const std::vector<double>& x, const std::vector<double>& w,
                                  const std::vector<double>& b, Index n, Index cin, Index h, Index wd, Index cout,
                                  Index k, Index pad, Index s, Index& oh, Index& ow) {
  oh = (h + 2 * pad - k) / s + 1;
  ow = (wd + 2 * pad - k) / s + 1;
  std::vector<double> out(std::size_t(n * cout * oh * ow), 0.0);
  for (Index i = 0; i < n; ++i) {
    for (Index co = 0; co < cout; ++co) {
      for (Index oy = 0; oy < oh; ++oy) {
        for (Index ox = 0; ox < ow; ++ox) {
          double acc = b.empty() ? 0.0 : b[std::size_t(co)];
          for (Index ci = 0; ci < cin; ++ci) {
            for (Index ky = 0; ky < k; ++ky) {
              for (Index kx = 0; kx < k; ++kx) {
                const Index iy = oy * s - pad + ky, ix = ox * s - pad + kx;
                if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                acc += w[std::size_t(((co * cin + ci) * k + ky) * k + kx)] *
                       x[std::size_t(((i * cin + ci) * h + iy) * wd + ix)];
              }
            }
          }
          out[std::size_t(((i * cout + co) * oh + oy) * ow + ox)] = acc;
        }
      }
    }
  }
  return out;
}

/// Jaccard of class c from explicit pixel sets.
inline double jaccard(const Grid<std::uint8_t>& pred, const Grid<std::uint8_t>& gt, int c) {
  std::set<Index> a, b;
  for (Index i = 0; i < pred.size(); ++i) {
    if (pred.data()[i] == c) a.insert(i);
    if (gt.data()[i] == c) b.insert(i);
  }
  std::set<Index> inter, uni;
  std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::inserter(inter, inter.begin()));
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::inserter(uni, uni.begin()));
  if (uni.empty()) return 1.0;
  return double(inter.size()) / double(uni.size());
}

template <typename T>
Grid<T> random_labels(Index h, Index w, int classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  Grid<T> g(h, w);
  for (Index i = 0; i < g.size(); ++i) g.data()[i] = T(d(rng));
  return g;
}

/// Random labels with spatially coherent blobs, closer to real label maps than
/// white noise.
inline Grid<std::uint8_t> blobby_labels(Index h, Index w, int classes, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, classes - 1);
  std::uniform_int_distribution<int> cell(2, 6);
  const int s = cell(rng);
  Grid<std::uint8_t> g(h, w);
  std::vector<std::uint8_t> coarse(std::size_t((h / s + 1) * (w / s + 1)));
  for (auto& v : coarse) v = std::uint8_t(d(rng));
  std::bernoulli_distribution flip(0.1);
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      g(y, x) = flip(rng) ? std::uint8_t(d(rng)) : coarse[std::size_t((y / s) * (w / s + 1) + x / s)];
    }
  }
  return g;
}

}  // namespace oracle
