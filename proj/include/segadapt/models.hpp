#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "segadapt/ops.hpp"
#include "segadapt/params.hpp"

namespace segadapt {

struct UNetConfig {
  int in_channels = 1;
  int num_classes = 4;
  int depth = 3;
  int base_channels = 16;
  int kernel = 3;

  int channels(int level) const { return base_channels << level; }
  /// Input height and width must be multiples of this.
  int spatial_multiple() const { return 1 << (depth - 1); }
  void validate() const {
    if (in_channels < 1 || num_classes < 2 || depth < 1 || base_channels < 1 || kernel < 1 ||
        kernel % 2 == 0 || depth > 12) {
      throw Error(Errc::BadConfig, "invalid UNet configuration");
    }
  }
};

struct DiscConfig {
  int in_channels = 2;
  std::array<int, 4> channels{16, 32, 64, 128};
  double slope = 0.2;
  int min_size = 16;
  /// Std of the final linear layer; small so a fresh discriminator starts
  /// near logit 0.
  double head_std = 0.01;
};

namespace detail {

template <typename Scalar>
Tensor<Scalar> he_normal(Shape shape, Index fan_in, std::mt19937_64& rng, double std_override = -1.0) {
  const double std = std_override > 0.0 ? std_override : std::sqrt(2.0 / double(fan_in));
  std::normal_distribution<double> dist(0.0, std);
  typename Tensor<Scalar>::Vector v(shape.size());
  for (Index i = 0; i < v.size(); ++i) v(i) = Scalar(dist(rng));
  return Tensor<Scalar>(shape, std::move(v), true);
}

template <typename Scalar>
void add_conv(ModelParams<Scalar>& p, const std::string& prefix, Index cin, Index cout, Index k,
              std::mt19937_64& rng, double std_override = -1.0) {
  p.add(prefix + ".w", he_normal<Scalar>(Shape{cout, cin, k, k}, cin * k * k, rng, std_override));
  p.add(prefix + ".b", Tensor<Scalar>(Shape{cout}, Scalar(0), true));
}

template <typename Scalar>
Tensor<Scalar> conv_relu(Graph<Scalar>& g, const ModelParams<Scalar>& p, const std::string& prefix,
                         const Tensor<Scalar>& x) {
  return relu(g, conv2d(g, x, p.at(prefix + ".w"), p.at(prefix + ".b")));
}

}  // namespace detail

/// 2D UNet. Encoder level i: two 3x3 conv+ReLU at base*2^i channels, then 2x2
/// max-pool except at the bottom. Decoder level i: nearest upsample, 3x3
/// conv+ReLU down to level-i width, concat with the encoder features of level
/// i, two 3x3 conv+ReLU. A 1x1 "head" conv produces the class logits.
/// He-normal weights, zero biases, deterministic in the seed.
template <typename Scalar = float>
ModelParams<Scalar> build_unet(const UNetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ModelParams<Scalar> p;
  const Index k = cfg.kernel;
  for (int i = 0; i < cfg.depth; ++i) {
    const Index cin = i == 0 ? cfg.in_channels : cfg.channels(i - 1);
    const std::string name = "enc" + std::to_string(i);
    detail::add_conv(p, name + ".conv1", cin, cfg.channels(i), k, rng);
    detail::add_conv(p, name + ".conv2", cfg.channels(i), cfg.channels(i), k, rng);
  }
  for (int i = cfg.depth - 2; i >= 0; --i) {
    const std::string name = "dec" + std::to_string(i);
    const Index c = cfg.channels(i);
    detail::add_conv(p, name + ".up", cfg.channels(i + 1), c, k, rng);
    detail::add_conv(p, name + ".conv1", 2 * c, c, k, rng);
    detail::add_conv(p, name + ".conv2", c, c, k, rng);
  }
  detail::add_conv(p, "head", cfg.channels(0), cfg.num_classes, 1, rng);
  return p;
}

/// Recovers the UNet layout from parameter names and shapes.
template <typename Scalar>
UNetConfig infer_unet_config(const ModelParams<Scalar>& p) {
  UNetConfig cfg;
  int depth = 0;
  while (p.find("enc" + std::to_string(depth) + ".conv1.w")) ++depth;
  const auto* first = p.find("enc0.conv1.w");
  const auto* head = p.find("head.w");
  if (depth == 0 || !first || !head) throw Error(Errc::ShapeMismatch, "parameters do not describe a UNet");
  cfg.depth = depth;
  cfg.base_channels = int(first->shape()[0]);
  cfg.in_channels = int(first->shape()[1]);
  cfg.kernel = int(first->shape()[2]);
  cfg.num_classes = int(head->shape()[0]);
  return cfg;
}

template <typename Scalar>
Tensor<Scalar> unet_forward(Graph<Scalar>& g, const ModelParams<Scalar>& p, const Tensor<Scalar>& x) {
  const UNetConfig cfg = infer_unet_config(p);
  const Shape& xs = x.shape();
  if (xs.c() != cfg.in_channels) throw Error(Errc::ShapeMismatch, "UNet input channels " + xs.str());
  if (xs.h() % cfg.spatial_multiple() != 0 || xs.w() % cfg.spatial_multiple() != 0) {
    throw Error(Errc::ShapeMismatch, "UNet input " + xs.str() + " not divisible by " +
                                         std::to_string(cfg.spatial_multiple()));
  }
  std::vector<Tensor<Scalar>> skips;
  Tensor<Scalar> h = x;
  for (int i = 0; i < cfg.depth; ++i) {
    const std::string name = "enc" + std::to_string(i);
    h = detail::conv_relu(g, p, name + ".conv1", h);
    h = detail::conv_relu(g, p, name + ".conv2", h);
    if (i < cfg.depth - 1) {
      skips.push_back(h);
      h = maxpool2d(g, h, 2, 2);
    }
  }
  for (int i = cfg.depth - 2; i >= 0; --i) {
    const std::string name = "dec" + std::to_string(i);
    h = detail::conv_relu(g, p, name + ".up", upsample_nn(g, h, 2));
    h = concat_channels(g, skips[std::size_t(i)], h);
    h = detail::conv_relu(g, p, name + ".conv1", h);
    h = detail::conv_relu(g, p, name + ".conv2", h);
  }
  return conv2d(g, h, p.at("head.w"), p.at("head.b"));
}

/// Four stride-2 3x3 convs with LeakyReLU, global average pool and a linear
/// layer to one logit per sample.
template <typename Scalar = float>
ModelParams<Scalar> build_discriminator(const DiscConfig& cfg, std::uint64_t seed) {
  if (cfg.in_channels < 1) throw Error(Errc::BadConfig, "discriminator needs input channels");
  std::mt19937_64 rng(seed);
  ModelParams<Scalar> p;
  Index cin = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    detail::add_conv(p, "d" + std::to_string(i), cin, cfg.channels[i], 3, rng);
    cin = cfg.channels[i];
  }
  detail::add_conv(p, "fc", cin, 1, 1, rng, cfg.head_std);
  return p;
}

template <typename Scalar>
Tensor<Scalar> disc_forward(Graph<Scalar>& g, const ModelParams<Scalar>& p, const Tensor<Scalar>& prob_map,
                            const DiscConfig& cfg = {}) {
  const Shape& s = prob_map.shape();
  const Index in_ch = p.at("d0.w").shape()[1];
  if (s.rank() != 4 || s.c() != in_ch) {
    throw Error(Errc::ShapeMismatch, "discriminator expects " + std::to_string(in_ch) + " channels, got " + s.str());
  }
  if (s.h() < cfg.min_size || s.w() < cfg.min_size) {
    throw Error(Errc::ShapeMismatch, "discriminator input " + s.str() + " below minimum size " +
                                         std::to_string(cfg.min_size));
  }
  const Index hw = s.h() * s.w();
  for (Index i = 0; i < s.n(); ++i) {
    Eigen::Map<const RowMatrix<Scalar>> planes(prob_map.data() + i * s.c() * hw, s.c(), hw);
    const auto sums = planes.colwise().sum().eval();
    if (((sums.array() - Scalar(1)).abs() > Scalar(1e-4)).any() || (planes.array() < Scalar(0)).any()) {
      throw Error(Errc::NotAProbabilityMap, "channel sums must be 1 within 1e-4");
    }
  }
  Tensor<Scalar> h = prob_map;
  for (std::size_t i = 0; i < cfg.channels.size(); ++i) {
    const std::string name = "d" + std::to_string(i);
    h = conv2d(g, h, p.at(name + ".w"), p.at(name + ".b"), Conv2dOptions{2, Padding::Same});
    h = leaky_relu(g, h, Scalar(cfg.slope));
  }
  h = global_avg_pool(g, h);
  return conv2d(g, h, p.at("fc.w"), p.at("fc.b"));
}

}  // namespace segadapt
