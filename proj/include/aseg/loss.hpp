#pragma once
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "aseg/tensor.hpp"

namespace aseg {

inline constexpr double kDiceSmoothing = 1e-5;

/// Multi-class soft Dice loss over a batch, squared-denominator form:
///   D_c = (2*sum(p_c*g_c) + s) / (sum(p_c^2) + sum(g_c^2) + s)
/// with g the one-hot labels and sums taken over all of (N, H, W); the loss
/// is 1 - mean(D_c) over every class including background, which keeps the
/// gradient defined on sub-images containing no foreground at all. The
/// gradient written to `grad` is the analytic derivative wrt probabilities:
///   dL/dp_c[i] = -(2/C) * (g_c[i] - D_c * p_c[i]) / (sum p_c^2 + sum g_c^2 + s).
/// Sums are accumulated in double regardless of T.
template <typename T>
double soft_dice_loss_into(const Tensor<T>& probs, const Tensor<std::uint8_t>& labels,
                           Tensor<T>& grad, double smoothing = kDiceSmoothing) {
  if (probs.rank() != 4) {
    throw std::invalid_argument("soft_dice_loss: probabilities must be (batch, class, row, col)");
  }
  const int N = probs.dim(0), C = probs.dim(1), H = probs.dim(2), W = probs.dim(3);
  if (labels.rank() != 3 || labels.dim(0) != N || labels.dim(1) != H || labels.dim(2) != W) {
    throw std::invalid_argument("soft_dice_loss: labels must be (batch, row, col) matching the probabilities");
  }
  for (std::uint8_t v : labels.data) {
    if (v >= C) {
      throw std::invalid_argument("soft_dice_loss: label " + std::to_string(int(v)) +
                                  " out of range for " + std::to_string(C) + " classes");
    }
  }

  const std::size_t hw = static_cast<std::size_t>(H) * W;
  std::vector<double> dice(C), denom(C);
  double mean_dice = 0.0;
  for (int c = 0; c < C; ++c) {
    double inter = 0.0, psq = 0.0, gcount = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* p = probs.ptr() + (static_cast<std::size_t>(n) * C + c) * hw;
      const std::uint8_t* g = labels.ptr() + n * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double pv = static_cast<double>(p[i]);
        psq += pv * pv;
        if (g[i] == c) {
          inter += pv;
          gcount += 1.0;  // one-hot squares equal themselves
        }
      }
    }
    denom[c] = psq + gcount + smoothing;
    dice[c] = (2.0 * inter + smoothing) / denom[c];
    mean_dice += dice[c] / C;
  }

  grad.resize(probs.shape);
  for (int c = 0; c < C; ++c) {
    const double scale = 2.0 / (C * denom[c]);
    const double dc = dice[c];
    for (int n = 0; n < N; ++n) {
      const T* p = probs.ptr() + (static_cast<std::size_t>(n) * C + c) * hw;
      T* gr = grad.ptr() + (static_cast<std::size_t>(n) * C + c) * hw;
      const std::uint8_t* g = labels.ptr() + n * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        const double gv = g[i] == c ? 1.0 : 0.0;
        gr[i] = static_cast<T>(-scale * (gv - dc * static_cast<double>(p[i])));
      }
    }
  }
  return 1.0 - mean_dice;
}

template <typename T>
struct DiceLossResult {
  double loss;
  Tensor<T> grad;
};

template <typename T>
DiceLossResult<T> soft_dice_loss(const Tensor<T>& probs, const Tensor<std::uint8_t>& labels,
                                 double smoothing = kDiceSmoothing) {
  DiceLossResult<T> out;
  out.loss = soft_dice_loss_into(probs, labels, out.grad, smoothing);
  return out;
}

}  // namespace aseg
