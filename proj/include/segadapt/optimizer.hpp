#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "segadapt/params.hpp"

namespace segadapt {

enum class OptimizerKind { Sgd, Adam };

inline OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "sgd") return OptimizerKind::Sgd;
  if (name == "adam") return OptimizerKind::Adam;
  throw Error(Errc::BadConfig, "unknown optimizer '" + name + "'");
}

inline std::string optimizer_name(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }

/// SGD or bias-corrected Adam over one ModelParams. Moments are allocated on
/// the first step and matched to parameters by position.
template <typename Scalar>
class Optimizer {
 public:
  using Vector = typename Tensor<Scalar>::Vector;

  explicit Optimizer(OptimizerKind kind, double lr = 1e-4) : kind_(kind), lr_(lr) {}

  OptimizerKind kind() const { return kind_; }
  double lr() const { return lr_; }
  long step_count() const { return t_; }

  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double eps = 1e-8;

  /// Applies one update from the populated gradients, then clears them.
  void step(ModelParams<Scalar>& params) {
    for (const auto& [name, p] : params) {
      if (!p.has_grad()) throw Error(Errc::MissingGradient, "no gradient for parameter " + name);
    }
    if (kind_ == OptimizerKind::Adam && m_.empty()) {
      for (const auto& e : params) {
        m_.push_back(Vector::Zero(e.second.size()));
        v_.push_back(Vector::Zero(e.second.size()));
      }
    }
    if (kind_ == OptimizerKind::Adam && m_.size() != params.size()) {
      throw Error(Errc::ShapeMismatch, "optimizer state does not match parameter list");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, double(t_));
    const double bc2 = 1.0 - std::pow(beta2, double(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i].second;
      const auto& g = p.grad();
      if (kind_ == OptimizerKind::Sgd) {
        p.value() -= Scalar(lr_) * g;
      } else {
        if (m_[i].size() != g.size()) throw Error(Errc::ShapeMismatch, "moment shape mismatch for " + params[i].first);
        m_[i] = Scalar(beta1) * m_[i] + Scalar(1.0 - beta1) * g;
        v_[i] = Scalar(beta2) * v_[i] + Scalar(1.0 - beta2) * g.cwiseProduct(g);
        for (Index j = 0; j < g.size(); ++j) {
          const double mhat = double(m_[i](j)) / bc1;
          const double vhat = double(v_[i](j)) / bc2;
          p.value()(j) -= Scalar(lr_ * mhat / (std::sqrt(vhat) + eps));
        }
      }
      p.clear_grad();
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  long t_ = 0;
  std::vector<Vector> m_, v_;
};

template <typename Scalar>
void optimizer_step(ModelParams<Scalar>& params, Optimizer<Scalar>& state) {
  state.step(params);
}

}  // namespace segadapt
