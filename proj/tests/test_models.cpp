#include <doctest.h>

#include <algorithm>
#include <random>
#include <set>

#include "segadapt/checkpoint.hpp"
#include "segadapt/models.hpp"
#include "test_util.hpp"

using namespace segadapt;

namespace {

/// Parameters of a k x k conv with bias.
Index conv_params(Index cin, Index cout, Index k) { return k * k * cin * cout + cout; }

Index unet_param_formula(const UNetConfig& c) {
  Index total = 0;
  for (int i = 0; i < c.depth; ++i) {
    const Index cin = i == 0 ? c.in_channels : c.channels(i - 1);
    total += conv_params(cin, c.channels(i), 3) + conv_params(c.channels(i), c.channels(i), 3);
  }
  for (int i = 0; i < c.depth - 1; ++i) {
    total += conv_params(c.channels(i + 1), c.channels(i), 3) + conv_params(2 * c.channels(i), c.channels(i), 3) +
             conv_params(c.channels(i), c.channels(i), 3);
  }
  return total + conv_params(c.channels(0), c.num_classes, 1);
}

Tensor<float> random_image(Index n, Index h, Index w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Tensor<float>::Vector v(n * h * w);
  for (Index i = 0; i < v.size(); ++i) v(i) = u(rng);
  return Tensor<float>(Shape{n, 1, h, w}, v);
}

Tensor<float> uniform_probs(Index n, Index c, Index h, Index w) {
  return Tensor<float>(Shape{n, c, h, w}, 1.0f / float(c));
}

}  // namespace

TEST_SUITE("models") {
  TEST_CASE("parameter count follows the closed form") {
    for (int depth : {1, 2, 3, 4}) {
      for (int base : {2, 8, 16}) {
        for (int classes : {2, 4}) {
          UNetConfig c;
          c.depth = depth;
          c.base_channels = base;
          c.num_classes = classes;
          CHECK(build_unet<float>(c, 1).scalar_count() == unet_param_formula(c));
        }
      }
    }
    UNetConfig bad;
    bad.num_classes = 1;
    CHECK(test_util::error_code([&] { build_unet<float>(bad, 1); }) == Errc::BadConfig);
  }

  TEST_CASE("names are unique and end in the head") {
    const auto p = build_unet<float>(UNetConfig{}, 3);
    const auto names = p.names();
    CHECK(std::set<std::string>(names.begin(), names.end()).size() == names.size());
    CHECK(names[names.size() - 2] == "head.w");
    CHECK(names.back() == "head.b");
    CHECK(infer_unet_config(p).depth == 3);
    CHECK(infer_unet_config(p).base_channels == 16);
  }

  TEST_CASE("same seed gives bitwise identical params") {
    CHECK(build_unet<float>(UNetConfig{}, 5) == build_unet<float>(UNetConfig{}, 5));
    CHECK_FALSE(build_unet<float>(UNetConfig{}, 5) == build_unet<float>(UNetConfig{}, 6));
    CHECK(build_discriminator<float>(DiscConfig{}, 5) == build_discriminator<float>(DiscConfig{}, 5));
  }

  TEST_CASE("UNet output shape and input checks") {
    UNetConfig c;
    c.num_classes = 2;
    const auto p = build_unet<float>(c, 1);
    Graph<float> g;
    const auto y = unet_forward(g, p, random_image(1, 32, 32, 1));
    CHECK(y.shape() == Shape{1, 2, 32, 32});
    CHECK(y.value().allFinite());
    CHECK(test_util::error_code([&] { unet_forward(g, p, random_image(1, 30, 32, 1)); }) == Errc::ShapeMismatch);
    CHECK(test_util::error_code([&] {
            unet_forward(g, p, Tensor<float>(Shape{1, 2, 32, 32}));
          }) == Errc::ShapeMismatch);
  }

  TEST_CASE("zero head gives uniform softmax") {
    UNetConfig c;
    c.base_channels = 4;
    auto p = build_unet<float>(c, 2);
    p.at("head.w").value().setZero();
    Graph<float> g;
    const auto s = softmax_channels(g, unet_forward(g, p, random_image(1, 16, 16, 3)));
    CHECK((s.value().array() - 0.25f).abs().maxCoeff() < 1e-7f);
  }

  TEST_CASE("batch samples are independent and permutable") {
    UNetConfig c;
    c.base_channels = 4;
    const auto p = build_unet<float>(c, 2);
    const auto a = random_image(1, 16, 16, 10), b = random_image(1, 16, 16, 11);
    Tensor<float>::Vector ab(2 * 256), ba(2 * 256);
    ab << a.value(), b.value();
    ba << b.value(), a.value();
    Graph<float> g;
    const auto yab = unet_forward(g, p, Tensor<float>(Shape{2, 1, 16, 16}, ab));
    const auto yba = unet_forward(g, p, Tensor<float>(Shape{2, 1, 16, 16}, ba));
    const Index per = 4 * 256;
    CHECK(yab.value().head(per) == yba.value().tail(per));
    CHECK(yab.value().tail(per) == yba.value().head(per));
    CHECK(yab.value().head(per) == unet_forward(g, p, a).value());
  }

  TEST_CASE("discriminator: one logit per sample, near zero when fresh") {
    const auto d = build_discriminator<float>(DiscConfig{}, 9);
    Graph<float> g;
    Tensor<float>::Vector v(2 * 2 * 16 * 16);
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (Index i = 0; i < 2 * 256; ++i) {
      const float p = u(rng);
      v(i / 256 * 512 + i % 256) = p;
      v(i / 256 * 512 + 256 + i % 256) = 1.0f - p;
    }
    const Tensor<float> maps(Shape{2, 2, 16, 16}, v);
    const auto logits = disc_forward(g, d, maps);
    CHECK(logits.size() == 2);
    CHECK(std::abs(logits.data()[0]) < 0.1f);
    CHECK(std::abs(logits.data()[1]) < 0.1f);
    CHECK(disc_forward(g, d, maps).value() == logits.value());
  }

  TEST_CASE("discriminator input checks") {
    const auto d = build_discriminator<float>(DiscConfig{}, 9);
    Graph<float> g;
    CHECK(test_util::error_code([&] { disc_forward(g, d, uniform_probs(1, 2, 16, 16)); }) == std::nullopt);
    CHECK(test_util::error_code([&] { disc_forward(g, d, uniform_probs(1, 2, 8, 8)); }) == Errc::ShapeMismatch);
    CHECK(test_util::error_code([&] { disc_forward(g, d, uniform_probs(1, 3, 16, 16)); }) == Errc::ShapeMismatch);
    CHECK(test_util::error_code([&] {
            disc_forward(g, d, Tensor<float>(Shape{1, 2, 16, 16}, 0.6f));
          }) == Errc::NotAProbabilityMap);
  }

  TEST_CASE("checkpoint round-trip is bitwise") {
    const auto dir = test_util::scratch_dir("ckpt");
    const auto p = build_unet<float>(UNetConfig{}, 4);
    save_checkpoint(p, dir / "a.ckpt");
    CHECK(load_checkpoint(dir / "a.ckpt") == p);
    CHECK(encode_checkpoint(load_checkpoint(dir / "a.ckpt")) == encode_checkpoint(p));

    auto bytes = encode_checkpoint(p);
    bytes.resize(bytes.size() - 3);
    CHECK(test_util::error_code([&] { decode_checkpoint(bytes); }) == Errc::CorruptEntry);
    bytes[0] = 'X';
    CHECK(test_util::error_code([&] { decode_checkpoint(bytes); }) == Errc::BadMagic);
    CHECK(test_util::error_code([&] { load_checkpoint(dir / "none.ckpt"); }) == Errc::IoFailure);
  }

  TEST_CASE("4-class into 2-class partial load reinitializes only the head") {
    const auto dir = test_util::scratch_dir("ckpt_partial");
    UNetConfig four;
    save_checkpoint(build_unet<float>(four, 1), dir / "m1.ckpt");
    UNetConfig two = four;
    two.num_classes = 2;
    const auto fresh = build_unet<float>(two, 2);
    auto target = fresh.clone();
    const auto report = load_checkpoint_partial(dir / "m1.ckpt", target);
    CHECK(report.reinitialized == std::vector<std::string>{"head.w", "head.b"});
    CHECK(report.transferred.size() + report.reinitialized.size() == target.size());
    const auto m1 = load_checkpoint(dir / "m1.ckpt");
    for (const auto& [name, t] : target) {
      if (name == "head.w" || name == "head.b") {
        CHECK(t.value() == fresh.at(name).value());
      } else {
        CHECK(t.value() == m1.at(name).value());
      }
    }
  }

  TEST_CASE("partial load across depths reports disjoint, complete lists") {
    UNetConfig a, b;
    a.depth = 2;
    b.depth = 3;
    auto target = build_unet<float>(b, 3);
    const auto report = transfer_matching(build_unet<float>(a, 1), target);
    std::set<std::string> all(report.transferred.begin(), report.transferred.end());
    for (const auto& n : report.reinitialized) CHECK(all.insert(n).second);
    const auto names = target.names();
    CHECK(all == std::set<std::string>(names.begin(), names.end()));
    CHECK(std::count(report.transferred.begin(), report.transferred.end(), "enc0.conv1.w") == 1);
  }
}
