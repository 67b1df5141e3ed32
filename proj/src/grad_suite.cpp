#include "segadapt/grad_suite.hpp"

#include <functional>
#include <random>

#include "segadapt/models.hpp"

namespace segadapt {

namespace {

using Vec = Eigen::VectorXd;
using T = Tensor<double>;
using G = Graph<double>;

T random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(s.size());
  for (Index i = 0; i < v.size(); ++i) v(i) = u(rng);
  return T(s, std::move(v));
}

Vec random_coeffs(Index n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec v(n);
  for (Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

ModelParams<double> conv_params(const std::string& name, Index cin, Index cout, Index k, std::mt19937_64& rng) {
  ModelParams<double> p;
  detail::add_conv(p, name, cin, cout, k, rng);
  // Nonzero biases so activations do not sit on kinks.
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (Index i = 0; i < p.at(name + ".b").size(); ++i) p.at(name + ".b").value()(i) = u(rng);
  return p;
}

/// conv -> layer -> fixed random projection.
LayerCheck check_after_conv(const std::string& family, Index cout, const std::function<T(G&, const T&)>& layer,
                            std::mt19937_64& rng, const GradCheckOptions& opt) {
  const T x = random_tensor(Shape{2, 2, 16, 16}, rng);
  ModelParams<double> p = conv_params("c", 2, cout, 3, rng);
  Vec coeffs;
  auto build = [&](G& g) {
    T y = layer(g, conv2d(g, x, p.at("c.w"), p.at("c.b")));
    if (coeffs.size() != y.size()) coeffs = random_coeffs(y.size(), rng);
    return weighted_sum(g, y, coeffs);
  };
  return {family, grad_check(build, p, opt)};
}

}  // namespace

std::vector<LayerCheck> run_grad_suite(std::uint64_t seed, GradCheckOptions opt) {
  std::mt19937_64 rng(seed);
  std::vector<LayerCheck> out;
  const auto id = [](G&, const T& y) { return y; };

  out.push_back(check_after_conv("conv2d", 3, id, rng, opt));
  {
    const T x = random_tensor(Shape{2, 2, 16, 16}, rng);
    ModelParams<double> p = conv_params("c", 2, 3, 3, rng);
    Vec coeffs;
    auto build = [&](G& g) {
      T y = conv2d(g, x, p.at("c.w"), p.at("c.b"), Conv2dOptions{2, Padding::Same});
      T z = conv2d(g, x, p.at("c.w"), p.at("c.b"), Conv2dOptions{1, Padding::Valid});
      if (coeffs.size() != y.size() + z.size()) coeffs = random_coeffs(y.size() + z.size(), rng);
      return add(g, weighted_sum(g, y, Vec(coeffs.head(y.size()))), weighted_sum(g, z, Vec(coeffs.tail(z.size()))));
    };
    out.push_back({"conv2d_stride_valid", grad_check(build, p, opt)});
  }
  out.push_back(check_after_conv("maxpool2d", 3, [](G& g, const T& y) { return maxpool2d(g, y, 2, 2); }, rng, opt));
  out.push_back(check_after_conv("upsample_nn", 3, [](G& g, const T& y) { return upsample_nn(g, y, 2); }, rng, opt));
  out.push_back(check_after_conv("concat_channels", 3,
                                 [](G& g, const T& y) { return concat_channels(g, y, relu(g, y)); }, rng, opt));
  out.push_back(check_after_conv("relu", 3, [](G& g, const T& y) { return relu(g, y); }, rng, opt));
  out.push_back(check_after_conv("leaky_relu", 3, [](G& g, const T& y) { return leaky_relu(g, y, 0.2); }, rng, opt));
  out.push_back(check_after_conv("sigmoid", 3, [](G& g, const T& y) { return sigmoid(g, y); }, rng, opt));
  out.push_back(check_after_conv("softmax_channels", 3, [](G& g, const T& y) { return softmax_channels(g, y); }, rng, opt));
  out.push_back(check_after_conv("global_avg_pool", 3, [](G& g, const T& y) { return global_avg_pool(g, y); }, rng, opt));
  out.push_back(check_after_conv("add", 3, [](G& g, const T& y) { return add(g, y, sigmoid(g, y)); }, rng, opt));

  {
    const T x = random_tensor(Shape{2, 2, 16, 16}, rng);
    ModelParams<double> p = conv_params("c", 2, 4, 3, rng);
    std::uniform_int_distribution<int> label(0, 3);
    std::uniform_real_distribution<double> weight(0.05, 3.0);
    std::vector<std::uint8_t> targets(2 * 16 * 16);
    std::vector<double> weights(targets.size());
    for (std::size_t i = 0; i < targets.size(); ++i) {
      targets[i] = std::uint8_t(label(rng));
      weights[i] = weight(rng);
    }
    auto build = [&](G& g) {
      return weighted_cross_entropy(g, conv2d(g, x, p.at("c.w"), p.at("c.b")), std::span<const std::uint8_t>(targets),
                                    std::span<const double>(weights));
    };
    out.push_back({"weighted_cross_entropy", grad_check(build, p, opt)});
  }
  {
    const T x = random_tensor(Shape{4, 2, 16, 16}, rng);
    ModelParams<double> p = conv_params("c", 2, 1, 3, rng);
    const std::vector<double> targets{1.0, 0.0, 0.95, 0.05};
    auto build = [&](G& g) {
      return bce_with_logits(g, global_avg_pool(g, conv2d(g, x, p.at("c.w"), p.at("c.b"))),
                             std::span<const double>(targets));
    };
    out.push_back({"bce_with_logits", grad_check(build, p, opt)});
  }
  {
    UNetConfig cfg;
    cfg.num_classes = 2;
    cfg.base_channels = 4;
    ModelParams<double> p = build_unet<double>(cfg, seed + 1);
    for (auto& [name, t] : p) {
      if (name.size() > 2 && name.substr(name.size() - 2) == ".b") t = random_tensor(t.shape(), rng, 0.05, 0.3);
    }
    p.set_requires_grad(true);
    const T x = random_tensor(Shape{2, 1, 16, 16}, rng, 0.0, 1.0);
    std::vector<std::uint8_t> targets(2 * 16 * 16);
    std::vector<double> weights(targets.size());
    std::uniform_int_distribution<int> label(0, 1);
    std::uniform_real_distribution<double> weight(0.05, 3.0);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      targets[i] = std::uint8_t(label(rng));
      weights[i] = weight(rng);
    }
    auto build = [&](G& g) {
      return weighted_cross_entropy(g, unet_forward(g, p, x), std::span<const std::uint8_t>(targets),
                                    std::span<const double>(weights));
    };
    out.push_back({"unet+weighted_ce", grad_check(build, p, opt)});
  }
  {
    DiscConfig dcfg;
    dcfg.head_std = 0.5;
    ModelParams<double> p = build_discriminator<double>(dcfg, seed + 2);
    ModelParams<double> pre = conv_params("s", 1, 2, 3, rng);
    for (auto& [name, t] : pre) p.add(name, t);
    const T x = random_tensor(Shape{2, 1, 16, 16}, rng);
    const std::vector<double> targets{1.0, 0.0};
    auto build = [&](G& g) {
      T probs = softmax_channels(g, conv2d(g, x, p.at("s.w"), p.at("s.b")));
      return bce_with_logits(g, disc_forward(g, p, probs, dcfg), std::span<const double>(targets));
    };
    out.push_back({"disc+bce", grad_check(build, p, opt)});
  }
  return out;
}

}  // namespace segadapt
