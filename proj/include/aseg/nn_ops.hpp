#pragma once
#include <cmath>
#include <cstring>
#include <stdexcept>
#include <vector>

#include "aseg/conv_kernels.hpp"
#include "aseg/error.hpp"
#include "aseg/rng.hpp"
#include "aseg/tensor.hpp"

namespace aseg {

enum class Mode { train, infer };

/// Parameters of one dilated convolution. weights: (out, in, k, k) with
/// k in {1, 3}; bias: (out).
template <typename T>
struct ConvParams {
  Tensor<T> weights;
  Tensor<T> bias;
  int dilation = 1;

  int out_channels() const { return weights.dim(0); }
  int in_channels() const { return weights.dim(1); }
  int kernel() const { return weights.dim(2); }
};

/// Learned scale/shift plus running statistics for inference-time
/// normalization. Running stats track the biased batch variance.
template <typename T>
struct BatchNormParams {
  Tensor<T> gamma, beta, running_mean, running_var;
  T momentum = static_cast<T>(0.9);
  T epsilon = static_cast<T>(1e-5);

  explicit BatchNormParams(int channels = 1)
      : gamma({channels}, T(1)),
        beta({channels}, T(0)),
        running_mean({channels}, T(0)),
        running_var({channels}, T(1)) {}
};

template <typename T>
struct BatchNormCache {
  Tensor<T> xhat;
  std::vector<T> inv_std;
};

namespace detail {

template <typename T>
void check_conv_args(const Tensor<T>& input, const ConvParams<T>& p) {
  if (input.rank() != 4)
    throw std::invalid_argument("conv2d: input must be (batch, channel, row, col), got " +
                                shape_string(input.shape));
  if (p.weights.rank() != 4 || p.weights.dim(2) != p.weights.dim(3))
    throw std::invalid_argument("conv2d: weights must be (out, in, k, k)");
  const int k = p.kernel();
  if (k != 1 && k != 3) throw std::invalid_argument("conv2d: kernel size must be 1 or 3");
  if (p.dilation < 1) throw std::invalid_argument("conv2d: dilation must be >= 1");
  if (p.weights.dim(1) != input.dim(1))
    throw std::invalid_argument("conv2d: input has " + std::to_string(input.dim(1)) +
                                " channels, weights expect " + std::to_string(p.weights.dim(1)));
  if (p.bias.rank() != 1 || p.bias.dim(0) != p.weights.dim(0))
    throw std::invalid_argument("conv2d: bias must have one entry per output channel");
  const int span = p.dilation * (k - 1);
  if (input.dim(2) <= span || input.dim(3) <= span)
    throw std::invalid_argument("conv2d: input " + shape_string(input.shape) +
                                " is smaller than the filter span " + std::to_string(span + 1));
}

/// Plain reference loops; the float AVX-512 path must agree with this up to
/// rounding. Also instantiated at double for gradient-check oracles.
template <typename T>
void conv_forward_ref(const T* in, int C, int H, int W, const T* w, const T* bias,
                      int OC, int k, int d, bool relu, T* out) {
  const int e = d * (k - 1);
  const int Hp = H - e, Wp = W - e;
  for (int o = 0; o < OC; ++o)
    for (int y = 0; y < Hp; ++y)
      for (int x = 0; x < Wp; ++x) {
        T acc = bias ? bias[o] : T(0);
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < k; ++i)
            for (int j = 0; j < k; ++j)
              acc += w[((static_cast<size_t>(o) * C + c) * k + i) * k + j] *
                     in[(static_cast<size_t>(c) * H + y + i * d) * W + x + j * d];
        out[(static_cast<size_t>(o) * Hp + y) * Wp + x] = (relu && acc < T(0)) ? T(0) : acc;
      }
}

template <typename T>
void conv_forward_batch(const T* in, int N, int C, int H, int W, const T* w,
                        const T* bias, int OC, int k, int d, bool relu, T* out) {
  if constexpr (std::is_same_v<T, float>) {
    if (kern::avx512_available()) {
      kern::conv2d_forward_avx512(in, N, C, H, W, w, bias, OC, k, d, relu, out);
      return;
    }
  }
  const int e = d * (k - 1);
  const size_t in_sz = static_cast<size_t>(C) * H * W;
  const size_t out_sz = static_cast<size_t>(OC) * (H - e) * (W - e);
  for (int n = 0; n < N; ++n)
    conv_forward_ref(in + n * in_sz, C, H, W, w, bias, OC, k, d, relu, out + n * out_sz);
}

/// Weight/bias gradients summed over the batch (overwrites gw/gb).
template <typename T>
void conv_backward_weights_batch(const T* in, int N, int C, int H, int W,
                                 const T* gout, int OC, int k, int d, T* gw, T* gb) {
  if constexpr (std::is_same_v<T, float>) {
    if (kern::avx512_available()) {
      kern::conv2d_backward_weights_avx512(in, N, C, H, W, gout, OC, k, d, gw, gb);
      return;
    }
  }
  const int e = d * (k - 1);
  const int Hp = H - e, Wp = W - e;
  const size_t in_sz = static_cast<size_t>(C) * H * W;
  const size_t out_sz = static_cast<size_t>(OC) * Hp * Wp;
  std::memset(gw, 0, sizeof(T) * static_cast<size_t>(OC) * C * k * k);
  std::memset(gb, 0, sizeof(T) * OC);
  for (int n = 0; n < N; ++n) {
    const T* in_n = in + n * in_sz;
    const T* gout_n = gout + n * out_sz;
    for (int o = 0; o < OC; ++o) {
      T s = 0;
      for (long i = 0; i < static_cast<long>(Hp) * Wp; ++i)
        s += gout_n[static_cast<size_t>(o) * Hp * Wp + i];
      gb[o] += s;
    }
    for (int o = 0; o < OC; ++o)
      for (int c = 0; c < C; ++c)
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            T s = 0;
            for (int y = 0; y < Hp; ++y)
              for (int x = 0; x < Wp; ++x)
                s += gout_n[(static_cast<size_t>(o) * Hp + y) * Wp + x] *
                     in_n[(static_cast<size_t>(c) * H + y + i * d) * W + x + j * d];
            gw[((static_cast<size_t>(o) * C + c) * k + i) * k + j] += s;
          }
  }
}

}  // namespace detail

/// Output spatial extent of a valid dilated convolution.
inline std::pair<int, int> conv_output_hw(int H, int W, int k, int dilation) {
  const int e = dilation * (k - 1);
  return {H - e, W - e};
}

/// Valid (unpadded) dilated 2-d convolution into a caller-owned output
/// tensor (resized here; reuse across calls avoids reallocation). Optionally
/// fuses ReLU into the store.
template <typename T>
void conv2d_dilated_into(const Tensor<T>& input, const ConvParams<T>& p,
                         Tensor<T>& out, bool fuse_relu = false) {
  detail::check_conv_args(input, p);
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int OC = p.out_channels(), k = p.kernel(), d = p.dilation;
  const auto [Hp, Wp] = conv_output_hw(H, W, k, d);
  out.resize({N, OC, Hp, Wp});
  detail::conv_forward_batch(input.ptr(), N, C, H, W, p.weights.ptr(), p.bias.ptr(),
                             OC, k, d, fuse_relu, out.ptr());
}

/// Valid (unpadded) dilated 2-d convolution, optionally fusing ReLU.
template <typename T>
Tensor<T> conv2d_dilated(const Tensor<T>& input, const ConvParams<T>& p,
                         bool fuse_relu = false) {
  Tensor<T> out;
  conv2d_dilated_into(input, p, out, fuse_relu);
  return out;
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weights;
  Tensor<T> bias;
};

/// Reusable buffers for conv2d_dilated_grad_into: the zero-margin padded
/// upstream gradient and the flipped/transposed weights. Keeping one per
/// layer lets repeated calls skip both the allocation and the margin
/// re-zeroing (the interior is overwritten every call; the margins only
/// need zeroing when the geometry changes).
template <typename T>
struct ConvGradScratch {
  Tensor<T> padded;
  Tensor<T> wt;
};

/// Gradients of conv2d_dilated. grad_out must have the forward output shape.
/// The input gradient (skipped when grad_input is null) is computed as a
/// valid convolution of the zero-padded upstream gradient with the spatially
/// flipped, channel-transposed weights; weight/bias gradients are summed
/// over the batch.
template <typename T>
void conv2d_dilated_grad_into(const Tensor<T>& input, const ConvParams<T>& p,
                              const Tensor<T>& grad_out, Tensor<T>& grad_weights,
                              Tensor<T>& grad_bias, Tensor<T>* grad_input,
                              ConvGradScratch<T>& scratch) {
  detail::check_conv_args(input, p);
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const int OC = p.out_channels(), k = p.kernel(), d = p.dilation;
  const auto [Hp, Wp] = conv_output_hw(H, W, k, d);
  if (grad_out.shape != std::vector<int>{N, OC, Hp, Wp})
    throw std::invalid_argument("conv2d_grad: grad_out shape " + shape_string(grad_out.shape) +
                                " does not match forward output " +
                                shape_string({N, OC, Hp, Wp}));

  grad_weights.resize(p.weights.shape);
  grad_bias.resize(p.bias.shape);
  detail::conv_backward_weights_batch(input.ptr(), N, C, H, W, grad_out.ptr(), OC, k, d,
                                      grad_weights.ptr(), grad_bias.ptr());
  if (!grad_input) return;

  // Input gradient. When the output plane is a small fraction of the input
  // plane (deep high-dilation layers), the padded full correlation below
  // would spend nearly all its work multiplying zero margins; scattering
  // each grad_out element's k*k taps directly is cheaper and touches only
  // real data. Every tap lands in bounds: y + i*d <= (Hp-1) + (k-1)*d < H.
  if (static_cast<long>(Hp) * Wp * 4 <= static_cast<long>(H) * W) {
    grad_input->resize(input.shape);
    std::memset(grad_input->ptr(), 0, sizeof(T) * grad_input->numel());
    scratch.wt.resize({C, Hp, Wp});  // per-tap accumulation planes
    T* acc = scratch.wt.ptr();
    const long plane = static_cast<long>(Hp) * Wp;
    for (int n = 0; n < N; ++n) {
      const T* go = grad_out.ptr() + static_cast<size_t>(n) * OC * plane;
      T* gi = grad_input->ptr() + static_cast<size_t>(n) * C * H * W;
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) {
          std::memset(acc, 0, sizeof(T) * static_cast<size_t>(C) * plane);
          for (int o = 0; o < OC; ++o) {
            const T* gop = go + o * plane;
            for (int c = 0; c < C; ++c) {
              const T wv =
                  p.weights.data[((static_cast<size_t>(o) * C + c) * k + i) * k + j];
              T* ap = acc + c * plane;
              for (long q = 0; q < plane; ++q) ap[q] += wv * gop[q];
            }
          }
          for (int c = 0; c < C; ++c)
            for (int y = 0; y < Hp; ++y) {
              T* dst = gi + (static_cast<size_t>(c) * H + y + i * d) * W + j * d;
              const T* src = acc + c * plane + static_cast<long>(y) * Wp;
              for (int x = 0; x < Wp; ++x) dst[x] += src[x];
            }
        }
    }
    return;
  }

  // Input gradient: full correlation = valid convolution of padded grad_out
  // against flipped/transposed weights.
  const int e = d * (k - 1);
  scratch.wt.resize({C, OC, k, k});
  for (int o = 0; o < OC; ++o)
    for (int c = 0; c < C; ++c)
      for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j)
          scratch.wt.data[((static_cast<size_t>(c) * OC + o) * k + i) * k + j] =
              p.weights.data[((static_cast<size_t>(o) * C + c) * k + (k - 1 - i)) * k +
                             (k - 1 - j)];
  const int Hq = Hp + 2 * e, Wq = Wp + 2 * e;
  const std::vector<int> padded_shape{N, OC, Hq, Wq};
  if (scratch.padded.shape != padded_shape) {
    scratch.padded.resize(padded_shape);
    std::memset(scratch.padded.ptr(), 0, sizeof(T) * scratch.padded.numel());
  }
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < OC; ++o)
      for (int y = 0; y < Hp; ++y)
        std::memcpy(scratch.padded.ptr() +
                        ((static_cast<size_t>(n) * OC + o) * Hq + y + e) * Wq + e,
                    grad_out.ptr() + (static_cast<size_t>(n) * OC + o) * Hp * Wp +
                        static_cast<size_t>(y) * Wp,
                    sizeof(T) * Wp);
  grad_input->resize(input.shape);
  detail::conv_forward_batch(scratch.padded.ptr(), N, OC, Hq, Wq, scratch.wt.ptr(),
                             static_cast<const T*>(nullptr), C, k, d, false,
                             grad_input->ptr());
}

template <typename T>
ConvGrads<T> conv2d_dilated_grad(const Tensor<T>& input, const ConvParams<T>& p,
                                 const Tensor<T>& grad_out) {
  ConvGrads<T> g;
  ConvGradScratch<T> scratch;
  conv2d_dilated_grad_into(input, p, grad_out, g.weights, g.bias, &g.input, scratch);
  return g;
}

/// Inference-time batch normalization using the frozen running statistics,
/// applied in place (a per-channel affine map).
template <typename T>
void batch_norm_infer_inplace(Tensor<T>& x, const BatchNormParams<T>& p) {
  if (x.rank() != 4) throw std::invalid_argument("batch_norm: input must be rank 4");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (p.gamma.dim(0) != C)
    throw std::invalid_argument("batch_norm: parameter channels do not match input");
  const size_t plane = static_cast<size_t>(H) * W;
  for (int c = 0; c < C; ++c) {
    const T scale = p.gamma.data[c] / std::sqrt(p.running_var.data[c] + p.epsilon);
    const T shift = p.beta.data[c] - scale * p.running_mean.data[c];
    for (int n = 0; n < N; ++n) {
      T* dst = x.ptr() + (static_cast<size_t>(n) * C + c) * plane;
      for (size_t i = 0; i < plane; ++i) dst[i] = scale * dst[i] + shift;
    }
  }
}

template <typename T>
Tensor<T> batch_norm_infer(const Tensor<T>& input, const BatchNormParams<T>& p) {
  Tensor<T> out = input;
  batch_norm_infer_inplace(out, p);
  return out;
}

/// Training-mode batch normalization of `x` in place: normalizes with batch
/// statistics, updates the running stats (running = momentum * running +
/// (1 - momentum) * batch) and fills `cache` for the backward pass. The
/// statistics are fully reduced before any element is rewritten, so
/// operating in place is safe.
template <typename T>
void batch_norm_train_inplace(Tensor<T>& x, BatchNormParams<T>& p,
                              BatchNormCache<T>* cache) {
  if (x.rank() != 4) throw std::invalid_argument("batch_norm: input must be rank 4");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (p.gamma.dim(0) != C)
    throw std::invalid_argument("batch_norm: parameter channels do not match input");
  const size_t plane = static_cast<size_t>(H) * W;
  const size_t m = static_cast<size_t>(N) * plane;

  if (cache) {
    cache->xhat.resize(x.shape);
    cache->inv_std.assign(C, T(0));
  }
  for (int c = 0; c < C; ++c) {
    double sum = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* src = x.ptr() + (static_cast<size_t>(n) * C + c) * plane;
      for (size_t i = 0; i < plane; ++i) sum += src[i];
    }
    const double mean = sum / static_cast<double>(m);
    double var_sum = 0.0;
    for (int n = 0; n < N; ++n) {
      const T* src = x.ptr() + (static_cast<size_t>(n) * C + c) * plane;
      for (size_t i = 0; i < plane; ++i) {
        const double dlt = src[i] - mean;
        var_sum += dlt * dlt;
      }
    }
    const double var = var_sum / static_cast<double>(m);
    const T inv_std = static_cast<T>(1.0 / std::sqrt(var + static_cast<double>(p.epsilon)));
    if (cache) cache->inv_std[c] = inv_std;
    const T mean_t = static_cast<T>(mean);
    for (int n = 0; n < N; ++n) {
      T* dst = x.ptr() + (static_cast<size_t>(n) * C + c) * plane;
      T* xh = cache ? cache->xhat.ptr() + (static_cast<size_t>(n) * C + c) * plane : nullptr;
      for (size_t i = 0; i < plane; ++i) {
        const T xn = (dst[i] - mean_t) * inv_std;
        if (xh) xh[i] = xn;
        dst[i] = p.gamma.data[c] * xn + p.beta.data[c];
      }
    }
    p.running_mean.data[c] = p.momentum * p.running_mean.data[c] + (T(1) - p.momentum) * mean_t;
    p.running_var.data[c] =
        p.momentum * p.running_var.data[c] + (T(1) - p.momentum) * static_cast<T>(var);
  }
}

/// Batch normalization over (batch, row, col) per channel. Training mode
/// normalizes with batch statistics, updates the running stats in place and
/// fills `cache` for the backward pass; inference mode uses the running
/// stats and leaves them untouched.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, BatchNormParams<T>& p, Mode mode,
                     BatchNormCache<T>* cache = nullptr) {
  if (mode == Mode::infer) return batch_norm_infer(input, p);
  Tensor<T> out = input;
  batch_norm_train_inplace(out, p, cache);
  return out;
}

template <typename T>
struct BatchNormGrads {
  Tensor<T> input;
  Tensor<T> gamma, beta;
};

/// Batch-norm backward with the input gradient written over `grad` in place
/// (the channel reductions complete before any element is rewritten).
template <typename T>
void batch_norm_grad_inplace(const BatchNormCache<T>& cache, const BatchNormParams<T>& p,
                             Tensor<T>& grad, Tensor<T>& grad_gamma, Tensor<T>& grad_beta) {
  if (grad.shape != cache.xhat.shape)
    throw std::invalid_argument("batch_norm_grad: grad_out does not match cached activation");
  const int N = grad.dim(0), C = grad.dim(1), H = grad.dim(2), W = grad.dim(3);
  const size_t plane = static_cast<size_t>(H) * W;
  const double m = static_cast<double>(N) * plane;
  grad_gamma.resize({C});
  grad_beta.resize({C});
  for (int c = 0; c < C; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int n = 0; n < N; ++n) {
      const size_t base = (static_cast<size_t>(n) * C + c) * plane;
      for (size_t i = 0; i < plane; ++i) {
        const double gv = grad.data[base + i];
        sum_g += gv;
        sum_gx += gv * cache.xhat.data[base + i];
      }
    }
    grad_gamma.data[c] = static_cast<T>(sum_gx);
    grad_beta.data[c] = static_cast<T>(sum_g);
    const T coef = p.gamma.data[c] * cache.inv_std[c];
    const T mg = static_cast<T>(sum_g / m), mgx = static_cast<T>(sum_gx / m);
    for (int n = 0; n < N; ++n) {
      const size_t base = (static_cast<size_t>(n) * C + c) * plane;
      for (size_t i = 0; i < plane; ++i)
        grad.data[base + i] =
            coef * (grad.data[base + i] - mg - cache.xhat.data[base + i] * mgx);
    }
  }
}

template <typename T>
BatchNormGrads<T> batch_norm_grad(const BatchNormCache<T>& cache, const BatchNormParams<T>& p,
                                  const Tensor<T>& grad_out) {
  BatchNormGrads<T> g;
  g.input = grad_out;
  batch_norm_grad_inplace(cache, p, g.input, g.gamma, g.beta);
  return g;
}

template <typename T>
void relu_inplace(Tensor<T>& x) {
  for (size_t i = 0; i < x.numel(); ++i)
    if (x.data[i] < T(0)) x.data[i] = T(0);
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out = x;
  relu_inplace(out);
  return out;
}

/// Zeroes `grad` wherever the forward input was not positive.
template <typename T>
void relu_backward_inplace(const Tensor<T>& forward_input, Tensor<T>& grad) {
  if (!forward_input.same_shape(grad))
    throw std::invalid_argument("relu_backward: shape mismatch");
  for (size_t i = 0; i < grad.numel(); ++i)
    if (!(forward_input.data[i] > T(0))) grad.data[i] = T(0);
}

/// grad_out where the forward input was positive, zero elsewhere.
template <typename T>
Tensor<T> relu_backward(const Tensor<T>& forward_input, const Tensor<T>& grad_out) {
  Tensor<T> out = grad_out;
  relu_backward_inplace(forward_input, out);
  return out;
}

/// Channel-wise softmax with the standard max-subtraction for stability.
/// Safe in place: each pixel's column is read before it is rewritten.
template <typename T>
void softmax_channels_inplace(Tensor<T>& x) {
  if (x.rank() != 4) throw std::invalid_argument("softmax: input must be rank 4");
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const size_t plane = static_cast<size_t>(H) * W;
  for (int n = 0; n < N; ++n) {
    T* p = x.ptr() + static_cast<size_t>(n) * C * plane;
    for (size_t i = 0; i < plane; ++i) {
      T mx = p[i];
      for (int c = 1; c < C; ++c) mx = std::max(mx, p[c * plane + i]);
      T sum = T(0);
      for (int c = 0; c < C; ++c) {
        const T ev = std::exp(p[c * plane + i] - mx);
        p[c * plane + i] = ev;
        sum += ev;
      }
      const T inv = T(1) / sum;
      for (int c = 0; c < C; ++c) p[c * plane + i] *= inv;
    }
  }
}

template <typename T>
Tensor<T> softmax_channels(const Tensor<T>& logits) {
  Tensor<T> out = logits;
  softmax_channels_inplace(out);
  return out;
}

/// Jacobian-vector product of softmax given its output probabilities,
/// rewriting `grad` in place (per-pixel dot completes before the writes).
template <typename T>
void softmax_backward_inplace(const Tensor<T>& probs, Tensor<T>& grad) {
  if (!probs.same_shape(grad))
    throw std::invalid_argument("softmax_backward: shape mismatch");
  const int N = probs.dim(0), C = probs.dim(1);
  const size_t plane = static_cast<size_t>(probs.dim(2)) * probs.dim(3);
  for (int n = 0; n < N; ++n) {
    const T* pp = probs.ptr() + static_cast<size_t>(n) * C * plane;
    T* gp = grad.ptr() + static_cast<size_t>(n) * C * plane;
    for (size_t i = 0; i < plane; ++i) {
      T dot = T(0);
      for (int c = 0; c < C; ++c) dot += gp[c * plane + i] * pp[c * plane + i];
      for (int c = 0; c < C; ++c)
        gp[c * plane + i] = pp[c * plane + i] * (gp[c * plane + i] - dot);
    }
  }
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& probs, const Tensor<T>& grad_probs) {
  Tensor<T> out = grad_probs;
  softmax_backward_inplace(probs, out);
  return out;
}

/// Inverted-dropout mask into a caller-owned tensor: entries are 0 with
/// probability p, else 1/(1-p), so the expected activation is unchanged and
/// inference applies no scaling. Draws consume the rng in flat index order.
template <typename T>
void dropout_mask_into(const std::vector<int>& shape, double p, Rng& rng,
                       Tensor<T>& mask) {
  if (!(p >= 0.0 && p < 1.0))
    throw std::invalid_argument("dropout: probability must be in [0, 1)");
  mask.resize(shape);
  const T keep = static_cast<T>(1.0 / (1.0 - p));
  for (size_t i = 0; i < mask.numel(); ++i)
    mask.data[i] = rng.uniform() < p ? T(0) : keep;
}

template <typename T>
Tensor<T> dropout_mask(const std::vector<int>& shape, double p, Rng& rng) {
  Tensor<T> mask;
  dropout_mask_into(shape, p, rng, mask);
  return mask;
}

/// Pads the two spatial axes by `margin` on every side with a constant.
template <typename T>
Tensor<T> pad2d(const Tensor<T>& x, int margin, T value) {
  if (x.rank() != 4) throw std::invalid_argument("pad2d: input must be rank 4");
  if (margin < 0) throw std::invalid_argument("pad2d: margin must be >= 0");
  if (margin == 0) return x;
  const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor<T> out({N, C, H + 2 * margin, W + 2 * margin}, value);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        std::memcpy(&out.at4(n, c, y + margin, margin), &x.at4(n, c, y, 0), sizeof(T) * W);
  return out;
}

}  // namespace aseg
