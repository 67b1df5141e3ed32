#pragma once

#include <cstdint>

#include "segadapt/volume.hpp"

namespace segadapt {

using WeightMap = Plane<float>;
/// 1 = boundary, 0 = everything else.
using BinaryMap = Plane<std::uint8_t>;

/// Shannon entropy (base 2) of the label histogram in a window x window
/// neighbourhood of each pixel, clamp-to-edge at the borders.
WeightMap entropy_map(const LabelPlane& labels, int window = 5);

BinaryMap binarize_labels(const LabelPlane& labels, std::uint8_t boundary_class = 1);

/// Exact squared Euclidean distance from every foreground (boundary) pixel to
/// the nearest background pixel; background pixels are 0. Two separable
/// passes of the lower envelope of parabolas. When the map has no background
/// at all every pixel gets the squared diagonal length.
Plane<double> squared_distance_transform(const BinaryMap& b);
WeightMap distance_transform(const BinaryMap& b);

/// Separable Gaussian blur, radius ceil(3 sigma), normalized kernel,
/// clamp-to-edge padding.
WeightMap gaussian_smooth(const WeightMap& w, float sigma = 10.0f);
Eigen::VectorXd gaussian_kernel(double sigma);

WeightMap fixed_ratio_weights(const BinaryMap& b, float ratio);

/// max(c * w, floor) with c chosen so the mean is 1; the result never drops
/// below floor and normalizing twice is a no-op. An all-zero map (or a floor
/// of 1 or more) gives all ones.
WeightMap normalize_weights(const WeightMap& w, float floor = 0.05f);

enum class WeightScheme { Entropy, Distance, Ratio, Uniform };

struct WeightSpec {
  WeightScheme scheme = WeightScheme::Uniform;
  float ratio = 10.0f;
  int window = 5;
  float sigma = 10.0f;
  float floor = 0.05f;
  std::uint8_t boundary_class = 1;
};

WeightScheme parse_scheme(const std::string& name);
std::string scheme_name(WeightScheme scheme);

/// Normalized loss weights for one label slice under the given scheme.
WeightMap scheme_weights(const LabelPlane& labels, const WeightSpec& spec);

/// Per-slice scheme_weights over a whole label volume, as an F32 volume.
Volume3D weight_volume(const Volume3D& labels, const WeightSpec& spec);

}  // namespace segadapt
