#pragma once

#include <cmath>
#include <cstdlib>
#include <functional>
#include <vector>

#include "foci/autograd.hpp"
#include "foci/tensor.hpp"

namespace foci {

// Compares tape gradients against central finite differences.
//
// `fn` must build a scalar loss from the current leaf values. It is called
// once with a tape to obtain analytic gradients and then repeatedly with
// nullptr while the harness perturbs one leaf element at a time. The
// difference step is `step` scaled by the element magnitude.
template <typename T>
struct GradCheck {
  T max_rel_error = 0;
  std::size_t checked = 0;

  static GradCheck run(const std::function<Tensor<T>(GradientTape<T>*)>& fn,
                       std::vector<Tensor<T>> leaves, T step = T(1e-4)) {
    // Leaves may carry gradients from an earlier check; clear them so the
    // analytic snapshot below reflects only this loss.
    for (auto& leaf : leaves) leaf.zero_grad();

    GradientTape<T> tape;
    Tensor<T> loss = fn(&tape);
    tape.backward(loss);

    std::vector<std::vector<T>> analytic;
    for (auto& leaf : leaves) {
      if (leaf.has_grad())
        analytic.push_back(leaf.grad());
      else
        analytic.emplace_back(leaf.numel(), T(0));
    }
    tape.clear();

    GradCheck result;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
      auto& leaf = leaves[li];
      for (std::size_t i = 0; i < leaf.numel(); ++i) {
        const T saved = leaf.data()[i];
        const T h = step * std::max(T(1), std::abs(saved));
        leaf.data()[i] = saved + h;
        const T f_plus = fn(nullptr).item();
        leaf.data()[i] = saved - h;
        const T f_minus = fn(nullptr).item();
        leaf.data()[i] = saved;

        const T fd = (f_plus - f_minus) / (2 * h);
        const T g = analytic[li][i];
        const T rel = std::abs(fd - g) / std::max({std::abs(fd), std::abs(g), T(1)});
        result.max_rel_error = std::max(result.max_rel_error, rel);
        ++result.checked;
      }
    }
    return result;
  }
};

template <typename T>
T grad_check(const std::function<Tensor<T>(GradientTape<T>*)>& fn, std::vector<Tensor<T>> leaves,
             T step = T(1e-4)) {
  return GradCheck<T>::run(fn, std::move(leaves), step).max_rel_error;
}

}  // namespace foci
