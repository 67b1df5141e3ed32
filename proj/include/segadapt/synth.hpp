#pragma once

#include <cstdint>
#include <span>
#include <string>

#include <Eigen/Core>

#include "segadapt/volume.hpp"

namespace segadapt {

enum class ClassMode { FourClass, Binary };
enum class DomainStyle { Source, Target };

/// Stored label codes. Four-class volumes use boundary = 1, cytoplasm = 2,
/// mitochondria = 3 and glia = 0 (glia's nominal code 4 taken mod 4), so both
/// modes keep the boundary at label 1.
namespace synth_labels {
inline constexpr std::uint8_t kGlia = 0;
inline constexpr std::uint8_t kBoundary = 1;
inline constexpr std::uint8_t kCytoplasm = 2;
inline constexpr std::uint8_t kMitochondria = 3;
}  // namespace synth_labels

struct SynthConfig {
  Dims3 dims{4, 64, 64};
  int seeds_per_slice = 8;
  double thickness = 2.0;
  ClassMode mode = ClassMode::Binary;
  DomainStyle style = DomainStyle::Source;
  double noise_sigma = 0.05;
  std::uint64_t seed = 42;

  void validate() const;
};

struct SynthVolumes {
  Volume3D images;
  Volume3D labels;
};

/// Nearest-seed partition of an h x w slice. Pixels whose nearest and
/// second-nearest seed distances differ by less than `thickness` are
/// boundary; region k gets interior class {cytoplasm, mitochondria, glia}[k % 3].
/// Returns four-class codes.
LabelPlane voronoi_tissue(std::span<const Eigen::Vector2d> seeds, Eigen::Index h, Eigen::Index w,
                          double thickness);

/// Deterministic image/label pair. Geometry depends only on (seed, slice);
/// the target style changes intensities (per-slice gain/bias, stronger
/// noise) and never the labels.
SynthVolumes generate(const SynthConfig& cfg);

ClassMode parse_class_mode(int classes);
DomainStyle parse_style(const std::string& name);

}  // namespace segadapt
