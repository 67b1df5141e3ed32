#include "segadapt/weight_maps.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

namespace segadapt {

WeightMap entropy_map(const LabelPlane& labels, int window) {
  if (window < 1 || window % 2 == 0) {
    throw Error(Errc::EvenWindow, "window must be odd and >= 1, got " + std::to_string(window));
  }
  if (labels.size() == 0) throw Error(Errc::EmptySlice, "entropy_map on an empty slice");
  const Eigen::Index h = labels.rows();
  const Eigen::Index w = labels.cols();
  const int r = window / 2;
  const double n = double(window) * window;

  // log2 table for counts 0..window^2
  std::vector<double> plogp(std::size_t(n) + 1, 0.0);
  for (std::size_t k = 1; k < plogp.size(); ++k) {
    const double f = double(k) / n;
    plogp[k] = -f * std::log2(f);
  }

  WeightMap out(h, w);
  std::array<int, 256> hist{};
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      hist.fill(0);
      for (int dy = -r; dy <= r; ++dy) {
        const Eigen::Index yy = std::clamp<Eigen::Index>(y + dy, 0, h - 1);
        for (int dx = -r; dx <= r; ++dx) {
          const Eigen::Index xx = std::clamp<Eigen::Index>(x + dx, 0, w - 1);
          ++hist[labels(yy, xx)];
        }
      }
      double e = 0.0;
      for (int count : hist) e += plogp[std::size_t(count)];
      out(y, x) = float(e);
    }
  }
  return out;
}

BinaryMap binarize_labels(const LabelPlane& labels, std::uint8_t boundary_class) {
  return (labels == boundary_class).cast<std::uint8_t>();
}

namespace {

// Lower envelope of parabolas y = f(q) + (p - q)^2 over the finite samples of
// f. Writes min_q f(q) + (p - q)^2 into out, or +inf when f has no finite
// sample.
void envelope_1d(const std::vector<double>& f, std::vector<double>& out, std::vector<int>& v,
                 std::vector<double>& z) {
  const int n = int(f.size());
  constexpr double inf = std::numeric_limits<double>::infinity();
  int k = -1;
  for (int q = 0; q < n; ++q) {
    if (!std::isfinite(f[std::size_t(q)])) continue;
    if (k < 0) {
      k = 0;
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      continue;
    }
    auto intersect = [&](int p) {
      return ((f[std::size_t(q)] + double(q) * q) - (f[std::size_t(p)] + double(p) * p)) /
             (2.0 * q - 2.0 * p);
    };
    double s = intersect(v[std::size_t(k)]);
    // z[0] is -inf, so this stops at k >= 0
    while (s <= z[std::size_t(k)]) {
      --k;
      s = intersect(v[std::size_t(k)]);
    }
    ++k;
    v[std::size_t(k)] = q;
    z[std::size_t(k)] = s;
    z[std::size_t(k) + 1] = inf;
  }
  if (k < 0) {
    std::fill(out.begin(), out.end(), inf);
    return;
  }
  int j = 0;
  for (int p = 0; p < n; ++p) {
    while (z[std::size_t(j) + 1] < p) ++j;
    const double d = double(p - v[std::size_t(j)]);
    out[std::size_t(p)] = d * d + f[std::size_t(v[std::size_t(j)])];
  }
}

}  // namespace

Plane<double> squared_distance_transform(const BinaryMap& b) {
  const Eigen::Index h = b.rows();
  const Eigen::Index w = b.cols();
  constexpr double inf = std::numeric_limits<double>::infinity();
  Plane<double> grid(h, w);
  for (Eigen::Index i = 0; i < b.size(); ++i) grid.data()[i] = b.data()[i] ? inf : 0.0;
  if (b.size() == 0) return grid;

  const std::size_t len = std::size_t(std::max(h, w));
  std::vector<double> f, out;
  std::vector<int> v(len);
  std::vector<double> z(len + 1);

  // columns
  f.resize(std::size_t(h));
  out.resize(std::size_t(h));
  for (Eigen::Index x = 0; x < w; ++x) {
    for (Eigen::Index y = 0; y < h; ++y) f[std::size_t(y)] = grid(y, x);
    envelope_1d(f, out, v, z);
    for (Eigen::Index y = 0; y < h; ++y) grid(y, x) = out[std::size_t(y)];
  }
  // rows
  f.resize(std::size_t(w));
  out.resize(std::size_t(w));
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) f[std::size_t(x)] = grid(y, x);
    envelope_1d(f, out, v, z);
    for (Eigen::Index x = 0; x < w; ++x) grid(y, x) = out[std::size_t(x)];
  }

  if (!std::isfinite(grid(0, 0))) {
    // no background anywhere
    grid.setConstant(double(h) * h + double(w) * w);
  }
  return grid;
}

WeightMap distance_transform(const BinaryMap& b) {
  return squared_distance_transform(b).sqrt().cast<float>();
}

Eigen::VectorXd gaussian_kernel(double sigma) {
  if (!(sigma > 0.0)) throw Error(Errc::NonPositiveSigma, "sigma must be > 0");
  const int radius = int(std::ceil(3.0 * sigma));
  Eigen::VectorXd k(2 * radius + 1);
  for (int i = -radius; i <= radius; ++i) k(i + radius) = std::exp(-double(i) * i / (2.0 * sigma * sigma));
  return k / k.sum();
}

WeightMap gaussian_smooth(const WeightMap& w, float sigma) {
  const Eigen::VectorXd k = gaussian_kernel(sigma);
  const int radius = int(k.size() / 2);
  const Eigen::Index h = w.rows();
  const Eigen::Index wd = w.cols();

  Plane<double> tmp(h, wd);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < wd; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += k(i + radius) * w(y, std::clamp<Eigen::Index>(x + i, 0, wd - 1));
      }
      tmp(y, x) = acc;
    }
  }
  WeightMap out(h, wd);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < wd; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        acc += k(i + radius) * tmp(std::clamp<Eigen::Index>(y + i, 0, h - 1), x);
      }
      out(y, x) = float(std::max(acc, 0.0));
    }
  }
  return out;
}

WeightMap fixed_ratio_weights(const BinaryMap& b, float ratio) {
  if (!(ratio > 0.0f)) throw Error(Errc::NonPositiveRatio, "ratio must be > 0");
  return (b != 0).select(WeightMap::Constant(b.rows(), b.cols(), ratio),
                         WeightMap::Ones(b.rows(), b.cols()));
}

WeightMap normalize_weights(const WeightMap& w, float floor) {
  if (w.size() == 0) return w;
  if ((w == 0.0f).all() || floor >= 1.0f) return WeightMap::Ones(w.rows(), w.cols());
  // Find the scale c with mean(max(c * w, floor)) == 1. The mean is monotone
  // in c, so walk the values in descending order until the set of unfloored
  // pixels is self-consistent.
  const double f = std::max(0.0f, floor);
  const auto n = std::size_t(w.size());
  std::vector<double> sorted(w.data(), w.data() + n);
  std::sort(sorted.begin(), sorted.end(), std::greater<>());
  double top_sum = 0.0;
  double scale = 1.0 / sorted[0];
  for (std::size_t k = 1; k <= n && sorted[k - 1] > 0.0; ++k) {
    top_sum += sorted[k - 1];
    const double c = (double(n) - double(n - k) * f) / top_sum;
    if (c * sorted[k - 1] >= f && (k == n || c * sorted[k] < f)) {
      scale = c;
      break;
    }
  }
  WeightMap out(w.rows(), w.cols());
  for (std::size_t i = 0; i < n; ++i) out.data()[i] = float(std::max(scale * w.data()[i], f));
  return out;
}

WeightScheme parse_scheme(const std::string& name) {
  if (name == "entropy") return WeightScheme::Entropy;
  if (name == "distance") return WeightScheme::Distance;
  if (name == "ratio") return WeightScheme::Ratio;
  if (name == "uniform") return WeightScheme::Uniform;
  throw Error(Errc::BadConfig, "unknown weight scheme '" + name + "'");
}

std::string scheme_name(WeightScheme scheme) {
  switch (scheme) {
    case WeightScheme::Entropy: return "entropy";
    case WeightScheme::Distance: return "distance";
    case WeightScheme::Ratio: return "ratio";
    case WeightScheme::Uniform: return "uniform";
  }
  return "uniform";
}

WeightMap scheme_weights(const LabelPlane& labels, const WeightSpec& spec) {
  switch (spec.scheme) {
    case WeightScheme::Entropy:
      return normalize_weights(entropy_map(labels, spec.window), spec.floor);
    case WeightScheme::Distance:
      return normalize_weights(
          gaussian_smooth(distance_transform(binarize_labels(labels, spec.boundary_class)), spec.sigma),
          spec.floor);
    case WeightScheme::Ratio:
      return normalize_weights(fixed_ratio_weights(binarize_labels(labels, spec.boundary_class), spec.ratio),
                               spec.floor);
    case WeightScheme::Uniform:
      break;
  }
  return WeightMap::Ones(labels.rows(), labels.cols());
}

Volume3D weight_volume(const Volume3D& labels, const WeightSpec& spec) {
  std::vector<ImagePlane> planes;
  planes.reserve(labels.dims().z);
  for (std::uint32_t z = 0; z < labels.dims().z; ++z) {
    planes.push_back(scheme_weights(labels.label_plane(z), spec));
  }
  return Volume3D::from_image_planes(planes);
}

}  // namespace segadapt
