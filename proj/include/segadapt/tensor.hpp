#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "segadapt/error.hpp"

namespace segadapt {

using Index = Eigen::Index;

/// Up to four dimensions; rank 0 is a scalar. Activations are always rank 4
/// in N x C x H x W order.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<Index> dims) {
    if (dims.size() > 4) throw Error(Errc::ShapeMismatch, "rank > 4");
    for (Index d : dims) {
      if (d < 0) throw Error(Errc::ShapeMismatch, "negative dimension");
      dims_[std::size_t(rank_++)] = d;
    }
  }

  int rank() const { return rank_; }
  Index operator[](int i) const { return dims_[std::size_t(i)]; }
  Index size() const {
    Index s = 1;
    for (int i = 0; i < rank_; ++i) s *= dims_[std::size_t(i)];
    return s;
  }

  Index n() const { return nchw(0); }
  Index c() const { return nchw(1); }
  Index h() const { return nchw(2); }
  Index w() const { return nchw(3); }

  friend bool operator==(const Shape& a, const Shape& b) {
    if (a.rank_ != b.rank_) return false;
    for (int i = 0; i < a.rank_; ++i) {
      if (a.dims_[std::size_t(i)] != b.dims_[std::size_t(i)]) return false;
    }
    return true;
  }

  std::string str() const {
    std::string s = "(";
    for (int i = 0; i < rank_; ++i) s += (i ? "," : "") + std::to_string(dims_[std::size_t(i)]);
    return s + ")";
  }

 private:
  Index nchw(int i) const {
    if (rank_ != 4) throw Error(Errc::ShapeMismatch, "expected an NCHW tensor, got " + str());
    return dims_[std::size_t(i)];
  }

  std::array<Index, 4> dims_{};
  int rank_ = 0;
};

template <typename Scalar>
struct TensorNode {
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  Shape shape;
  Vector value;
  Vector grad;  // empty until a backward pass reaches this node
  bool requires_grad = false;
};

/// Shared handle to a dense tensor. Copies alias the same storage, which is
/// what lets graph records refer back to their inputs; use clone() for an
/// independent copy.
template <typename Scalar>
class Tensor {
 public:
  using Vector = typename TensorNode<Scalar>::Vector;

  Tensor() = default;

  explicit Tensor(Shape shape, Scalar fill = Scalar(0), bool requires_grad = false)
      : node_(std::make_shared<TensorNode<Scalar>>()) {
    node_->shape = shape;
    node_->value = Vector::Constant(shape.size(), fill);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, Vector values, bool requires_grad = false)
      : node_(std::make_shared<TensorNode<Scalar>>()) {
    if (values.size() != shape.size()) {
      throw Error(Errc::ShapeMismatch, "value count " + std::to_string(values.size()) +
                                           " does not fill shape " + shape.str());
    }
    node_->shape = shape;
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return bool(node_); }
  const Shape& shape() const { return node_->shape; }
  Index size() const { return node_->value.size(); }

  const Vector& value() const { return node_->value; }
  Vector& value() { return node_->value; }
  Scalar* data() { return node_->value.data(); }
  const Scalar* data() const { return node_->value.data(); }

  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  const Vector& grad() const { return node_->grad; }
  Vector& grad() { return node_->grad; }
  /// Allocates a zero gradient on first use. Callable on const handles since
  /// backward closures hold const copies.
  Vector& grad_buffer() const {
    if (!has_grad()) node_->grad = Vector::Zero(node_->value.size());
    return node_->grad;
  }
  void clear_grad() { node_->grad.resize(0); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }

  Scalar item() const {
    if (size() != 1) throw Error(Errc::NonScalarOutput, "item() on tensor of shape " + shape().str());
    return node_->value(0);
  }

  Scalar at(Index n, Index c, Index h, Index w) const {
    const auto& s = shape();
    return node_->value(((n * s.c() + c) * s.h() + h) * s.w() + w);
  }

  Tensor clone() const {
    Tensor t(shape(), value(), requires_grad());
    return t;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape(), value().template cast<Other>(), requires_grad());
  }

  bool same_node(const Tensor& o) const { return node_ == o.node_; }

 private:
  std::shared_ptr<TensorNode<Scalar>> node_;
};

/// Tape of executed operations. Each differentiable op appends a closure that
/// reads its output gradient and accumulates into its inputs; backward() runs
/// the closures once each in reverse execution order.
template <typename Scalar>
class Graph {
 public:
  void record(std::function<void()> backward_fn) { tape_.push_back(std::move(backward_fn)); }

  std::size_t size() const { return tape_.size(); }

  /// Branch tracking: ops with kinks (ReLU signs, max-pool winners) fold
  /// their active branch into a signature when enabled, so a caller can tell
  /// whether two evaluations went through the same linear piece.
  void track_branches(bool on) { track_ = on; }
  bool tracking_branches() const { return track_; }
  void note_branch(std::uint64_t h) {
    sig_ ^= h + 0x9e3779b97f4a7c15ULL + (sig_ << 6) + (sig_ >> 2);
  }
  std::uint64_t branch_signature() const { return sig_; }

  void backward(Tensor<Scalar> loss) {
    if (loss.size() != 1) {
      throw Error(Errc::NonScalarOutput, "backward from non-scalar tensor " + loss.shape().str());
    }
    loss.grad_buffer().setConstant(Scalar(1));
    for (auto it = tape_.rbegin(); it != tape_.rend(); ++it) (*it)();
    tape_.clear();
  }

 private:
  std::vector<std::function<void()>> tape_;
  bool track_ = false;
  std::uint64_t sig_ = 0;
};

template <typename Scalar>
void ensure_finite(const Tensor<Scalar>& t, const char* where) {
  if (!t.value().allFinite()) throw Error(Errc::NonFiniteValue, std::string("non-finite output in ") + where);
}

template <typename Scalar>
void ensure_finite_grad(const Tensor<Scalar>& t, const char* where) {
  if (t.has_grad() && !t.grad().allFinite()) {
    throw Error(Errc::NonFiniteValue, std::string("non-finite gradient in ") + where);
  }
}

}  // namespace segadapt
