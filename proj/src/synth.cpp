#include "segadapt/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <vector>

namespace segadapt {

namespace {

constexpr std::array<std::uint8_t, 3> kInteriorCycle{synth_labels::kCytoplasm, synth_labels::kMitochondria,
                                                     synth_labels::kGlia};

float base_intensity(std::uint8_t tissue) {
  switch (tissue) {
    case synth_labels::kBoundary: return 0.15f;
    case synth_labels::kCytoplasm: return 0.70f;
    case synth_labels::kMitochondria: return 0.45f;
    default: return 0.90f;
  }
}

std::uint64_t mix(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

void SynthConfig::validate() const {
  if (dims.z == 0 || dims.y == 0 || dims.x == 0) throw Error(Errc::BadConfig, "synthetic dims must be positive");
  if (seeds_per_slice < 2) throw Error(Errc::BadConfig, "need at least 2 seed points per slice");
  if (thickness < 1.0) throw Error(Errc::BadConfig, "boundary thickness must be >= 1");
  if (!(noise_sigma >= 0.0)) throw Error(Errc::BadConfig, "noise sigma must be >= 0");
}

LabelPlane voronoi_tissue(std::span<const Eigen::Vector2d> seeds, Eigen::Index h, Eigen::Index w,
                          double thickness) {
  if (seeds.size() < 2) throw Error(Errc::BadConfig, "need at least 2 seed points");
  LabelPlane out(h, w);
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) {
      const Eigen::Vector2d p{double(y), double(x)};
      double d1 = std::numeric_limits<double>::infinity();
      double d2 = d1;
      std::size_t nearest = 0;
      for (std::size_t k = 0; k < seeds.size(); ++k) {
        const double d = (p - seeds[k]).norm();
        if (d < d1) {
          d2 = d1;
          d1 = d;
          nearest = k;
        } else if (d < d2) {
          d2 = d;
        }
      }
      out(y, x) = d2 - d1 < thickness ? synth_labels::kBoundary : kInteriorCycle[nearest % kInteriorCycle.size()];
    }
  }
  return out;
}

SynthVolumes generate(const SynthConfig& cfg) {
  cfg.validate();
  const Eigen::Index h = cfg.dims.y;
  const Eigen::Index w = cfg.dims.x;
  std::vector<LabelPlane> labels;
  std::vector<ImagePlane> images;
  for (std::uint32_t z = 0; z < cfg.dims.z; ++z) {
    const std::uint64_t slice_seed = cfg.seed ^ std::uint64_t(z);
    std::mt19937_64 geometry(slice_seed);
    std::uniform_real_distribution<double> uy(0.0, double(h));
    std::uniform_real_distribution<double> ux(0.0, double(w));
    std::vector<Eigen::Vector2d> seeds;
    for (int k = 0; k < cfg.seeds_per_slice; ++k) {
      const double y = uy(geometry);
      seeds.emplace_back(y, ux(geometry));
    }
    const LabelPlane tissue = voronoi_tissue(seeds, h, w, cfg.thickness);

    const bool target = cfg.style == DomainStyle::Target;
    std::mt19937_64 photo(mix(slice_seed) + (target ? 0x7461726765740000ULL : 0));
    double gain = 1.0, bias = 0.0, sigma = cfg.noise_sigma;
    if (target) {
      gain = std::uniform_real_distribution<double>(0.6, 0.9)(photo);
      bias = std::uniform_real_distribution<double>(0.05, 0.25)(photo);
      sigma *= 2.0;
    }
    std::normal_distribution<double> noise(0.0, 1.0);
    ImagePlane img(h, w);
    for (Eigen::Index i = 0; i < tissue.size(); ++i) {
      const double v = gain * base_intensity(tissue.data()[i]) + bias + sigma * noise(photo);
      img.data()[i] = float(std::clamp(v, 0.0, 1.0));
    }
    images.push_back(std::move(img));
    labels.push_back(cfg.mode == ClassMode::Binary ? LabelPlane((tissue == synth_labels::kBoundary).cast<std::uint8_t>())
                                                   : tissue);
  }
  const std::uint8_t classes = cfg.mode == ClassMode::Binary ? 2 : 4;
  return {Volume3D::from_image_planes(images), Volume3D::from_label_planes(labels, classes)};
}

ClassMode parse_class_mode(int classes) {
  if (classes == 4) return ClassMode::FourClass;
  if (classes == 2) return ClassMode::Binary;
  throw Error(Errc::BadConfig, "synthetic data supports 4 or 2 classes");
}

DomainStyle parse_style(const std::string& name) {
  if (name == "source") return DomainStyle::Source;
  if (name == "target") return DomainStyle::Target;
  throw Error(Errc::BadConfig, "unknown domain style '" + name + "'");
}

}  // namespace segadapt
