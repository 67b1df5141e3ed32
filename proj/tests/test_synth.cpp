#include <doctest.h>

#include <cmath>

#include "segadapt/synth.hpp"
#include "segadapt/weight_maps.hpp"
#include "test_util.hpp"

using namespace segadapt;

namespace {

double slice_mean_variance(const Volume3D& images) {
  std::vector<double> means;
  for (std::uint32_t z = 0; z < images.dims().z; ++z) means.push_back(images.image_plane(z).cast<double>().mean());
  double mu = 0.0;
  for (double m : means) mu += m / double(means.size());
  double var = 0.0;
  for (double m : means) var += (m - mu) * (m - mu) / double(means.size());
  return var;
}

}  // namespace

TEST_SUITE("synth") {
  TEST_CASE("same seed gives identical volumes") {
    SynthConfig cfg;
    cfg.mode = ClassMode::FourClass;
    const auto a = generate(cfg), b = generate(cfg);
    CHECK(a.images == b.images);
    CHECK(a.labels == b.labels);
    cfg.seed = 43;
    CHECK_FALSE(generate(cfg).labels == a.labels);
  }

  TEST_CASE("boundary fraction is about ten percent at unit thickness and scales with it") {
    // seeds differ in high bits so their slice seeds (seed ^ z) do not overlap
    for (std::uint64_t seed : {100, 2000, 30000, 42}) {
      auto fraction = [&](double thickness) {
        SynthConfig cfg;
        cfg.dims = {8, 64, 64};
        cfg.seed = seed;
        cfg.thickness = thickness;
        const auto v = generate(cfg);
        Eigen::Index boundary = 0;
        for (auto l : v.labels.label_data()) boundary += l == 1;
        return double(boundary) / double(v.labels.dims().count());
      };
      const double thin = fraction(1.0), standard = fraction(2.0);
      INFO("seed " << seed << " fractions " << thin << " " << standard);
      CHECK(thin >= 0.08);
      CHECK(thin <= 0.15);
      CHECK(standard / thin >= 1.8);
      CHECK(standard / thin <= 2.2);
    }
  }

  TEST_CASE("declared classes are all present") {
    for (auto mode : {ClassMode::FourClass, ClassMode::Binary}) {
      SynthConfig cfg;
      cfg.mode = mode;
      const auto v = generate(cfg);
      CHECK(v.labels.dtype() == DType::U8Label);
      std::vector<int> hist(v.labels.classes(), 0);
      for (auto l : v.labels.label_data()) ++hist[l];
      CHECK(v.labels.classes() == (mode == ClassMode::Binary ? 2 : 4));
      for (int h : hist) CHECK(h > 0);
    }
  }

  TEST_CASE("binary labels are the boundary of the four-class labels") {
    SynthConfig cfg;
    cfg.mode = ClassMode::FourClass;
    const auto four = generate(cfg).labels;
    cfg.mode = ClassMode::Binary;
    const auto two = generate(cfg).labels;
    for (std::uint32_t z = 0; z < four.dims().z; ++z) {
      CHECK((binarize_labels(four.label_plane(z)) == two.label_plane(z)).all());
    }
  }

  TEST_CASE("target style shifts intensities but not labels") {
    SynthConfig cfg;
    cfg.dims = {16, 32, 32};
    const auto src = generate(cfg);
    cfg.style = DomainStyle::Target;
    const auto tgt = generate(cfg);
    CHECK(src.labels == tgt.labels);
    CHECK_FALSE(src.images == tgt.images);
    CHECK(slice_mean_variance(tgt.images) > slice_mean_variance(src.images));
    for (float v : tgt.images.scalar_data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }

  TEST_CASE("two seeds with a thick band split the slice along the bisector") {
    const std::vector<Eigen::Vector2d> seeds{{10.0, 5.0}, {10.0, 25.0}};
    const double thickness = 4.0;
    const LabelPlane l = voronoi_tissue(seeds, 20, 30, thickness);
    for (Eigen::Index y = 0; y < 20; ++y) {
      for (Eigen::Index x = 0; x < 30; ++x) {
        // |d1 - d2| for seeds on a horizontal axis depends on x and y; at the
        // bisector x = 15 it is zero
        const double d1 = (Eigen::Vector2d(double(y), double(x)) - seeds[0]).norm();
        const double d2 = (Eigen::Vector2d(double(y), double(x)) - seeds[1]).norm();
        const bool band = std::abs(d1 - d2) < thickness;
        CHECK((l(y, x) == synth_labels::kBoundary) == band);
      }
      CHECK(l(y, 15) == synth_labels::kBoundary);
      CHECK(l(y, 0) == synth_labels::kCytoplasm);
      CHECK(l(y, 29) == synth_labels::kMitochondria);
    }
  }

  TEST_CASE("config errors") {
    SynthConfig cfg;
    cfg.seeds_per_slice = 1;
    CHECK(test_util::error_code([&] { generate(cfg); }) == Errc::BadConfig);
    cfg = {};
    cfg.thickness = 0.5;
    CHECK(test_util::error_code([&] { generate(cfg); }) == Errc::BadConfig);
    CHECK(test_util::error_code([] { parse_class_mode(3); }) == Errc::BadConfig);
    CHECK(parse_style("target") == DomainStyle::Target);
  }
}
