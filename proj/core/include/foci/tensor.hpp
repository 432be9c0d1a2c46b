#pragma once

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace foci {

// Extents of a dense 4-D array in batch/channel/height/width order.
struct Shape4 {
  int n = 0, c = 0, h = 0, w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape4&) const = default;
  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

namespace detail {

// Shared storage node. A Tensor is a handle; ops that consume a tensor and
// the gradient tape both hold the same node, so gradients accumulate into
// a single buffer per tensor. The grad vector stays empty until the
// backward pass first writes to it, which lets backward skip subgraphs
// nothing differentiable flowed through.
template <typename T>
struct TensorNode {
  Shape4 shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  Tensor() = default;

  Tensor(int n, int c, int h, int w) {
    if (n < 1 || c < 1 || h < 1 || w < 1)
      throw std::invalid_argument("tensor extents must be >= 1, got " +
                                  Shape4{n, c, h, w}.str());
    node_ = std::make_shared<detail::TensorNode<T>>();
    node_->shape = {n, c, h, w};
    node_->value.assign(node_->shape.numel(), T(0));
  }

  explicit Tensor(Shape4 s) : Tensor(s.n, s.c, s.h, s.w) {}

  static Tensor full(Shape4 s, T fill) {
    Tensor t(s);
    for (auto& v : t.node_->value) v = fill;
    return t;
  }

  static Tensor from_values(Shape4 s, std::vector<T> values) {
    if (values.size() != s.numel())
      throw std::invalid_argument("value count " + std::to_string(values.size()) +
                                  " does not match shape " + s.str());
    Tensor t(s);
    t.node_->value = std::move(values);
    return t;
  }

  static Tensor scalar(T v) {
    Tensor t(1, 1, 1, 1);
    t.node_->value[0] = v;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape4& shape() const { return node_->shape; }
  int n() const { return node_->shape.n; }
  int c() const { return node_->shape.c; }
  int h() const { return node_->shape.h; }
  int w() const { return node_->shape.w; }
  std::size_t numel() const { return node_->shape.numel(); }
  bool is_scalar() const { return numel() == 1; }

  T* data() { return node_->value.data(); }
  const T* data() const { return node_->value.data(); }
  std::vector<T>& values() { return node_->value; }
  const std::vector<T>& values() const { return node_->value; }

  T& at(int in, int ic, int iy, int ix) {
    const Shape4& s = node_->shape;
    return node_->value[((static_cast<std::size_t>(in) * s.c + ic) * s.h + iy) * s.w + ix];
  }
  const T& at(int in, int ic, int iy, int ix) const {
    const Shape4& s = node_->shape;
    return node_->value[((static_cast<std::size_t>(in) * s.c + ic) * s.h + iy) * s.w + ix];
  }

  T item() const {
    if (!is_scalar()) throw std::invalid_argument("item() on non-scalar tensor " + shape().str());
    return node_->value[0];
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  // Gradient buffer; empty vector means "no gradient reached this tensor".
  const std::vector<T>& grad() const { return node_->grad; }
  bool has_grad() const { return node_ && !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  std::shared_ptr<detail::TensorNode<T>> node() const { return node_; }

  // Deep copy of values; grad state is not copied.
  Tensor clone() const {
    Tensor t(node_->shape);
    t.node_->value = node_->value;
    t.node_->requires_grad = node_->requires_grad;
    return t;
  }

 private:
  std::shared_ptr<detail::TensorNode<T>> node_;
};

// Channel slice [from, from+count), sharing no storage with the source.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& x, int from, int count) {
  if (from < 0 || count < 1 || from + count > x.c())
    throw std::invalid_argument("channel slice [" + std::to_string(from) + "," +
                                std::to_string(from + count) + ") out of range for " +
                                x.shape().str());
  Tensor<T> out(x.n(), count, x.h(), x.w());
  for (int in = 0; in < x.n(); ++in)
    for (int ic = 0; ic < count; ++ic)
      for (int iy = 0; iy < x.h(); ++iy)
        for (int ix = 0; ix < x.w(); ++ix)
          out.at(in, ic, iy, ix) = x.at(in, from + ic, iy, ix);
  return out;
}

}  // namespace foci
