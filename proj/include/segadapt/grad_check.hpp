#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "segadapt/params.hpp"

namespace segadapt {

struct GradCheckOptions {
  double h = 1e-3;
  Index coords_per_param = 50;
  std::uint64_t seed = 7;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
  Index coords_checked = 0;
  /// Coordinates replaced because +h or -h changed a ReLU sign or max-pool
  /// winner.
  Index coords_skipped = 0;
};

/// Compares reverse-mode gradients of a scalar graph against central
/// differences, per coordinate on a random subsample of each parameter.
/// `build` maps a fresh Graph<double> to a scalar loss that reads `params`.
/// Relative error is |a - n| / max(1e-8, |a| + |n|). A coordinate whose
/// stencil crosses a kink is replaced by the next random one.
template <typename Builder>
GradCheckReport grad_check(Builder&& build, ModelParams<double>& params, GradCheckOptions opt = {}) {
  params.clear_grads();
  std::uint64_t base_sig = 0;
  {
    Graph<double> g;
    g.track_branches(true);
    Tensor<double> loss = build(g);
    if (loss.size() != 1) throw Error(Errc::NonScalarOutput, "grad_check needs a scalar output");
    base_sig = g.branch_signature();
    g.backward(loss);
  }
  auto eval = [&](std::uint64_t& sig) {
    Graph<double> g;
    g.track_branches(true);
    const double v = build(g).item();
    sig = g.branch_signature();
    return v;
  };

  std::mt19937_64 rng(opt.seed);
  GradCheckReport report;
  for (auto& [name, p] : params) {
    const Index n = p.size();
    std::vector<Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Index(0));
    Index checked = 0;
    for (Index i = 0; i < n && checked < opt.coords_per_param; ++i) {
      std::uniform_int_distribution<Index> pick(i, n - 1);
      std::swap(idx[std::size_t(i)], idx[std::size_t(pick(rng))]);
      const Index j = idx[std::size_t(i)];
      const double analytic = p.has_grad() ? p.grad()(j) : 0.0;
      const double saved = p.value()(j);
      std::uint64_t sig_up = 0, sig_down = 0;
      p.value()(j) = saved + opt.h;
      const double up = eval(sig_up);
      p.value()(j) = saved - opt.h;
      const double down = eval(sig_down);
      p.value()(j) = saved;
      if (sig_up != base_sig || sig_down != base_sig) {
        // The stencil straddles a kink; the difference quotient is not a
        // derivative there.
        ++report.coords_skipped;
        continue;
      }
      ++checked;
      const double numeric = (up - down) / (2.0 * opt.h);
      const double err = std::abs(analytic - numeric) / std::max(1e-8, std::abs(analytic) + std::abs(numeric));
      ++report.coords_checked;
      if (err > report.max_rel_error || report.worst_index < 0) {
        report.max_rel_error = std::max(err, report.max_rel_error);
        report.worst_param = name;
        report.worst_index = j;
        report.analytic = analytic;
        report.numeric = numeric;
      }
    }
  }
  params.clear_grads();
  return report;
}

}  // namespace segadapt
