// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The uc3d Authors

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "uc3d/core/error.hpp"

namespace uc3d::dm {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

struct TensorData {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
};

/// Shared handle to row-major double data. Copies alias the same storage;
/// use clone() for a deep copy. Gradients live on the Tape, not here.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    auto d = std::make_shared<TensorData>();
    d->data.assign(shape_size(shape), 0.0);
    d->shape = std::move(shape);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }

  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (values.size() != shape_size(shape)) {
      throw ShapeError("tensor: " + std::to_string(values.size()) + " values for shape " + shape_str(shape));
    }
    auto d = std::make_shared<TensorData>();
    d->shape = std::move(shape);
    d->data = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }

  static Tensor scalar(double v, bool requires_grad = false) { return from({}, {v}, requires_grad); }

  bool defined() const { return impl_ != nullptr; }
  explicit operator bool() const { return defined(); }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t size() const { return impl_->data.size(); }

  std::span<double> data() { return impl_->data; }
  std::span<const double> data() const { return impl_->data; }
  std::vector<double>& values() { return impl_->data; }
  const std::vector<double>& values() const { return impl_->data; }
  double operator[](std::size_t i) const { return impl_->data[i]; }

  double item() const {
    if (size() != 1) throw ContractError("tensor: item() on shape " + shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool v) { impl_->requires_grad = v; }

  /// Identity of the underlying storage.
  const TensorData* id() const { return impl_.get(); }
  bool same(const Tensor& o) const { return impl_ == o.impl_; }

  Tensor clone() const {
    auto d = std::make_shared<TensorData>(*impl_);
    return Tensor(std::move(d));
  }

  /// Deep copy that is never tracked.
  Tensor detach() const { return from(shape(), values(), false); }

 private:
  explicit Tensor(std::shared_ptr<TensorData> d) : impl_(std::move(d)) {}
  std::shared_ptr<TensorData> impl_;
};

/// Records backward rules of ops in execution order. One backward pass walks
/// them in reverse. Gradients are stored per tape, so parameters can be read
/// by several tapes on different threads.
class Tape {
 public:
  Tape() = default;
  explicit Tape(bool track_branches) : track_branches_(track_branches) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void(Tape&)> rule) { rules_.push_back(std::move(rule)); }

  std::size_t size() const { return rules_.size(); }

  /// Zero-initialized on first access.
  std::vector<double>& grad_buffer(const Tensor& t) {
    auto& g = grads_[t.id()];
    if (g.empty()) g.assign(t.size(), 0.0);
    return g;
  }

  /// nullptr when no gradient reached t.
  const std::vector<double>* grad(const Tensor& t) const {
    const auto it = grads_.find(t.id());
    return it == grads_.end() ? nullptr : &it->second;
  }

  bool has_grad(const Tensor& t) const { return grads_.count(t.id()) != 0; }

  void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
      throw ContractError("backward: loss must be a scalar tensor, got shape " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    }
    if (!loss.requires_grad()) throw ContractError("backward: loss was not recorded on a tape");
    if (done_) throw ContractError("backward: tape already consumed");
    done_ = true;
    grad_buffer(loss)[0] = 1.0;
    for (auto it = rules_.rbegin(); it != rules_.rend(); ++it) (*it)(*this);
  }

  // Branch signature: a hash over every relu sign and max/argmax decision of
  // the forward pass. Two evaluations with equal signatures sit on the same
  // smooth piece, which is what finite-difference checks need.
  bool tracking_branches() const { return track_branches_; }
  void note_branch(std::uint64_t v) {
    branch_hash_ ^= v + 0x9e3779b97f4a7c15ULL + (branch_hash_ << 6) + (branch_hash_ >> 2);
  }
  std::uint64_t branch_signature() const { return branch_hash_; }

 private:
  std::vector<std::function<void(Tape&)>> rules_;
  std::unordered_map<const TensorData*, std::vector<double>> grads_;
  bool done_ = false;
  bool track_branches_ = false;
  std::uint64_t branch_hash_ = 0;
};

}  // namespace uc3d::dm
