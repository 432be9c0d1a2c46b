#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "foci/tensor.hpp"

namespace foci {

// Reverse-mode tape. Forward ops append one closure each; backward() seeds
// the loss gradient and replays the closures in exact reverse execution
// order. Closures accumulate additively into the shared per-tensor grad
// buffers, so a tensor feeding several consumers sums their contributions.
template <typename T>
class GradientTape {
 public:
  using BackwardFn = std::function<void()>;

  void record(BackwardFn fn) { ops_.push_back(std::move(fn)); }

  std::size_t size() const { return ops_.size(); }

  void backward(const Tensor<T>& loss) {
    if (!loss.is_scalar())
      throw std::invalid_argument("backward requires a scalar loss, got " + loss.shape().str());
    auto node = loss.node();
    node->ensure_grad();
    node->grad[0] += T(1);
    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) (*it)();
  }

  // Drops the recorded graph (and with it the references keeping
  // intermediate activations alive).
  void clear() { ops_.clear(); }

 private:
  std::vector<BackwardFn> ops_;
};

// Free-function form matching the rest of the op vocabulary.
template <typename T>
void backward(GradientTape<T>& tape, const Tensor<T>& loss) {
  tape.backward(loss);
}

}  // namespace foci
