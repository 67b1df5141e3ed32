#pragma once

#include <cstring>
#include <string>
#include <utility>
#include <vector>

#include "segadapt/tensor.hpp"

namespace segadapt {

/// Ordered, uniquely named parameter tensors. Order is the serialization
/// order and never changes after construction.
template <typename Scalar>
class ModelParams {
 public:
  using Entry = std::pair<std::string, Tensor<Scalar>>;

  void add(std::string name, Tensor<Scalar> t) {
    if (find(name) != nullptr) throw Error(Errc::InvariantViolation, "duplicate parameter name " + name);
    t.set_requires_grad(true);
    entries_.emplace_back(std::move(name), std::move(t));
  }

  const Tensor<Scalar>* find(const std::string& name) const {
    for (const auto& e : entries_) {
      if (e.first == name) return &e.second;
    }
    return nullptr;
  }
  Tensor<Scalar>* find(const std::string& name) {
    return const_cast<Tensor<Scalar>*>(std::as_const(*this).find(name));
  }

  const Tensor<Scalar>& at(const std::string& name) const {
    const auto* t = find(name);
    if (!t) throw Error(Errc::ShapeMismatch, "no parameter named " + name);
    return *t;
  }
  Tensor<Scalar>& at(const std::string& name) { return const_cast<Tensor<Scalar>&>(std::as_const(*this).at(name)); }

  std::size_t size() const { return entries_.size(); }
  Index scalar_count() const {
    Index total = 0;
    for (const auto& e : entries_) total += e.second.size();
    return total;
  }

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }
  const Entry& operator[](std::size_t i) const { return entries_[i]; }
  Entry& operator[](std::size_t i) { return entries_[i]; }

  std::vector<std::string> names() const {
    std::vector<std::string> out;
    for (const auto& e : entries_) out.push_back(e.first);
    return out;
  }

  void set_requires_grad(bool on) {
    for (auto& e : entries_) e.second.set_requires_grad(on);
  }
  void clear_grads() {
    for (auto& e : entries_) e.second.clear_grad();
  }

  /// Independent storage, same names and values.
  ModelParams clone() const {
    ModelParams out;
    for (const auto& e : entries_) out.entries_.emplace_back(e.first, e.second.clone());
    return out;
  }

  template <typename Other>
  ModelParams<Other> cast() const {
    ModelParams<Other> out;
    for (const auto& e : entries_) out.add(e.first, e.second.template cast<Other>());
    return out;
  }

  /// Bitwise equality of names, shapes and values.
  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const auto& ea = a.entries_[i];
      const auto& eb = b.entries_[i];
      if (ea.first != eb.first || !(ea.second.shape() == eb.second.shape())) return false;
      if (std::memcmp(ea.second.data(), eb.second.data(), std::size_t(ea.second.size()) * sizeof(Scalar)) != 0) {
        return false;
      }
    }
    return true;
  }

 private:
  std::vector<Entry> entries_;
};

}  // namespace segadapt
