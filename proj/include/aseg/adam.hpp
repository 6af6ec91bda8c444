#pragma once
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "aseg/error.hpp"
#include "aseg/tensor.hpp"

namespace aseg {

/// Per-parameter Adam moment accumulators plus the shared step counter and
/// hyperparameters. One state drives a whole parameter list (in the order
/// the network reports its parameters).
template <typename T>
struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long t = 0;
  std::vector<Tensor<T>> m, v;
};

template <typename T>
AdamState<T> make_adam_state(const std::vector<Tensor<T>*>& params, double learning_rate) {
  AdamState<T> st;
  st.learning_rate = learning_rate;
  st.m.reserve(params.size());
  st.v.reserve(params.size());
  for (const Tensor<T>* p : params) {
    st.m.emplace_back(p->shape);  // zero-initialized
    st.v.emplace_back(p->shape);
  }
  return st;
}

/// One bias-corrected Adam update. Gradients are validated to be finite
/// before anything is mutated, so a non-finite gradient aborts with the
/// parameter and state untouched (letting the trainer keep its last good
/// checkpoint). Per-element arithmetic runs in double and is stored back
/// as T, which keeps float training deterministic and well-scaled at any
/// step count.
template <typename T>
void adam_step(const std::vector<Tensor<T>*>& params, const std::vector<Tensor<T>*>& grads,
               AdamState<T>& st) {
  if (params.size() != grads.size() || params.size() != st.m.size()) {
    throw std::invalid_argument("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape != grads[i]->shape || params[i]->shape != st.m[i].shape) {
      throw std::invalid_argument("adam_step: shape mismatch in parameter tensor " +
                                  std::to_string(i));
    }
    const Tensor<T>& g = *grads[i];
    for (std::size_t j = 0; j < g.numel(); ++j) {
      if (!std::isfinite(static_cast<double>(g.data[j]))) {
        throw NumericalError("adam_step: non-finite gradient in parameter tensor " +
                             std::to_string(i) + " at element " + std::to_string(j));
      }
    }
  }

  st.t += 1;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    T* p = params[i]->ptr();
    const T* g = grads[i]->ptr();
    T* m = st.m[i].ptr();
    T* v = st.v[i].ptr();
    const std::size_t n = params[i]->numel();
    for (std::size_t j = 0; j < n; ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = st.beta1 * static_cast<double>(m[j]) + (1.0 - st.beta1) * gj;
      const double vj = st.beta2 * static_cast<double>(v[j]) + (1.0 - st.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      p[j] = static_cast<T>(static_cast<double>(p[j]) -
                            st.learning_rate * (mj / bc1) / (std::sqrt(vj / bc2) + st.epsilon));
    }
  }
}

}  // namespace aseg
