#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "segadapt/grad_check.hpp"
#include "segadapt/grad_suite.hpp"
#include "segadapt/ops.hpp"
#include "segadapt/optimizer.hpp"
#include "test_util.hpp"

using namespace segadapt;

namespace {

Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, bool rg = false) {
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::VectorXd v(s.size());
  for (Index i = 0; i < v.size(); ++i) v(i) = d(rng);
  return Tensor<double>(s, v, rg);
}

std::vector<double> to_vec(const Tensor<double>& t) { return {t.data(), t.data() + t.size()}; }

}  // namespace

TEST_SUITE("tensor_autodiff") {
  TEST_CASE("conv2d forward matches the direct loop") {
    std::mt19937_64 rng(1);
    struct Case {
      Index n, cin, h, w, cout, k, stride;
      Padding pad;
    };
    for (const Case c : {Case{2, 3, 7, 6, 4, 3, 1, Padding::Same}, Case{1, 2, 8, 8, 3, 3, 2, Padding::Same},
                         Case{1, 1, 5, 9, 2, 1, 1, Padding::Valid}, Case{2, 2, 9, 7, 1, 3, 2, Padding::Valid},
                         Case{1, 1, 6, 6, 2, 5, 1, Padding::Same}}) {
      Graph<double> g;
      const auto x = random_tensor(Shape{c.n, c.cin, c.h, c.w}, rng);
      const auto w = random_tensor(Shape{c.cout, c.cin, c.k, c.k}, rng);
      const auto b = random_tensor(Shape{c.cout}, rng);
      const auto y = conv2d(g, x, w, b, Conv2dOptions{int(c.stride), c.pad});
      Index oh = 0, ow = 0;
      const auto want = oracle::conv2d(to_vec(x), to_vec(w), to_vec(b), c.n, c.cin, c.h, c.w, c.cout, c.k,
                                       c.pad == Padding::Same ? (c.k - 1) / 2 : 0, c.stride, oh, ow);
      REQUIRE(y.shape() == Shape{c.n, c.cout, oh, ow});
      double worst = 0.0;
      for (std::size_t i = 0; i < want.size(); ++i) worst = std::max(worst, std::abs(want[i] - y.data()[i]));
      CHECK(worst <= 1e-12);
    }
  }

  TEST_CASE("conv2d input gradient matches finite differences") {
    std::mt19937_64 rng(2);
    ModelParams<double> p;
    p.add("x", random_tensor(Shape{2, 2, 6, 5}, rng, true));
    p.add("w", random_tensor(Shape{3, 2, 3, 3}, rng, true));
    const Eigen::VectorXd coeffs = random_tensor(Shape{2 * 3 * 3 * 3}, rng).value();
    auto build = [&](Graph<double>& g) {
      return weighted_sum(g, conv2d(g, p.at("x"), p.at("w"), Tensor<double>(), Conv2dOptions{2, Padding::Same}),
                          coeffs);
    };
    const auto report = grad_check(build, p);
    CHECK(report.max_rel_error < 1e-6);
    CHECK(report.coords_checked == 50 + 50);
  }

  TEST_CASE("maxpool picks the first maximum and routes its gradient") {
    Graph<double> g;
    Eigen::VectorXd v(8);
    v << 1, 3, 3, 0,  //
        2, 3, 1, 5;
    Tensor<double> x(Shape{1, 1, 2, 4}, v, true);
    Tensor<double> y = maxpool2d(g, x, 2, 2);
    CHECK(y.data()[0] == 3);
    CHECK(y.data()[1] == 5);
    Eigen::VectorXd c(2);
    c << 1.0, 2.0;
    g.backward(weighted_sum(g, y, c));
    Eigen::VectorXd want = Eigen::VectorXd::Zero(8);
    want(1) = 1.0;
    want(7) = 2.0;
    CHECK(x.grad() == want);
    CHECK(test_util::error_code([] {
            Graph<double> g2;
            maxpool2d(g2, Tensor<double>(Shape{1, 1, 3, 4}), 2, 2);
          }) == Errc::IndivisibleSpatialDims);
  }

  TEST_CASE("softmax sums to one per pixel") {
    std::mt19937_64 rng(3);
    Graph<double> g;
    const auto s = softmax_channels(g, random_tensor(Shape{2, 4, 3, 3}, rng));
    for (Index n = 0; n < 2; ++n) {
      for (Index y = 0; y < 3; ++y) {
        for (Index x = 0; x < 3; ++x) {
          double sum = 0.0;
          for (Index c = 0; c < 4; ++c) sum += s.at(n, c, y, x);
          CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        }
      }
    }
  }

  TEST_CASE("weighted CE with equal weights is the plain mean CE") {
    std::mt19937_64 rng(4);
    Graph<double> g;
    const auto logits = random_tensor(Shape{1, 3, 2, 2}, rng);
    const std::vector<std::uint8_t> t{0, 2, 1, 1};
    const std::vector<double> ones(4, 1.0), sevens(4, 7.0);
    double want = 0.0;
    for (Index px = 0; px < 4; ++px) {
      double z = 0.0;
      for (Index c = 0; c < 3; ++c) z += std::exp(logits.data()[c * 4 + px]);
      want += std::log(z) - logits.data()[t[std::size_t(px)] * 4 + px];
    }
    want /= 4.0;
    CHECK(weighted_cross_entropy(g, logits, std::span<const std::uint8_t>(t), std::span<const double>(ones)).item() ==
          doctest::Approx(want).epsilon(1e-12));
    CHECK(weighted_cross_entropy(g, logits, std::span<const std::uint8_t>(t), std::span<const double>(sevens)).item() ==
          doctest::Approx(want).epsilon(1e-12));
    const std::vector<double> zeros(4, 0.0);
    CHECK(test_util::error_code([&] {
            weighted_cross_entropy(g, logits, std::span<const std::uint8_t>(t), std::span<const double>(zeros));
          }) == Errc::AllZeroWeights);
    const std::vector<std::uint8_t> bad{0, 3, 0, 0};
    CHECK(test_util::error_code([&] {
            weighted_cross_entropy(g, logits, std::span<const std::uint8_t>(bad), std::span<const double>(ones));
          }) == Errc::LabelOutOfRange);
  }

  TEST_CASE("bce at logit zero is ln 2 and stays finite for large logits") {
    Graph<double> g;
    CHECK(bce_with_logits(g, Tensor<double>(Shape{1}, 0.0), 1.0).item() == doctest::Approx(std::log(2.0)));
    CHECK(bce_with_logits(g, Tensor<double>(Shape{1}, 0.0), 0.0).item() == doctest::Approx(std::log(2.0)));
    CHECK(bce_with_logits(g, Tensor<double>(Shape{1}, 800.0), 0.0).item() == doctest::Approx(800.0));
    CHECK(bce_with_logits(g, Tensor<double>(Shape{1}, -800.0), 0.0).item() == doctest::Approx(0.0));
  }

  TEST_CASE("backward needs a scalar and clears the tape") {
    Graph<double> g;
    Tensor<double> x(Shape{2}, 1.0, true);
    Tensor<double> y = add(g, x, x);
    CHECK(test_util::error_code([&] { g.backward(y); }) == Errc::NonScalarOutput);
    Eigen::VectorXd c(2);
    c << 1.0, -1.0;
    g.backward(weighted_sum(g, y, c));
    CHECK(g.size() == 0);
    CHECK(x.grad()(0) == 2.0);
    CHECK(x.grad()(1) == -2.0);
  }

  TEST_CASE("optimizer: SGD and Adam steps, missing gradients") {
    ModelParams<double> p;
    p.add("a", Tensor<double>(Shape{2}, 1.0));
    p.at("a").grad_buffer() << 0.5, -2.0;
    Optimizer<double> sgd(OptimizerKind::Sgd, 0.1);
    sgd.step(p);
    CHECK(p.at("a").value()(0) == doctest::Approx(0.95));
    CHECK(p.at("a").value()(1) == doctest::Approx(1.2));
    CHECK_FALSE(p.at("a").has_grad());
    CHECK(test_util::error_code([&] { sgd.step(p); }) == Errc::MissingGradient);

    // first Adam step moves every coordinate by lr * sign(grad)
    Optimizer<double> adam(OptimizerKind::Adam, 0.01);
    p.at("a").grad_buffer() << 3.0, -1e-3;
    const Eigen::VectorXd before = p.at("a").value();
    adam.step(p);
    CHECK(p.at("a").value()(0) == doctest::Approx(before(0) - 0.01).epsilon(1e-6));
    CHECK(p.at("a").value()(1) == doctest::Approx(before(1) + 0.01).epsilon(1e-4));
    CHECK(parse_optimizer("sgd") == OptimizerKind::Sgd);
    CHECK(test_util::error_code([] { parse_optimizer("rmsprop"); }) == Errc::BadConfig);
  }

  TEST_CASE("grad check reports a wrong gradient") {
    // A closure that scales its gradient by 2 must be caught.
    ModelParams<double> p;
    p.add("a", Tensor<double>(Shape{3}, 0.7));
    auto build = [&](Graph<double>& g) {
      const Tensor<double>& a = p.at("a");
      Tensor<double> out(Shape{}, a.value().squaredNorm(), true);
      g.record([a, out]() { a.grad_buffer() += 4.0 * out.grad()(0) * a.value(); });
      return out;
    };
    CHECK(grad_check(build, p).max_rel_error > 0.3);
  }

  TEST_CASE("gradient suite passes at 1e-4") {
    for (const auto& c : run_grad_suite(42)) {
      INFO(c.family << " worst " << c.report.worst_param << "[" << c.report.worst_index << "]");
      CHECK(c.report.max_rel_error < 1e-4);
      CHECK(c.report.coords_checked > 0);
    }
  }
}
