#pragma once

namespace aseg::kern {

/// True when the CPU supports the AVX-512 foundation ISA. Decided once at
/// first call; the templated reference loops in nn_ops.hpp are the fallback.
inline bool avx512_available() {
  static const bool ok = __builtin_cpu_supports("avx512f");
  return ok;
}

/// Valid (no padding) dilated 2-d cross-correlation over a mini-batch.
///   in:   (N, C, H, W) row-major
///   w:    (OC, C, k, k), k in {1, 3}
///   bias: OC entries or nullptr for zero bias
///   out:  (N, OC, H - d*(k-1), W - d*(k-1))
/// Taking the whole batch lets the kernel pack the weights once per call.
/// Accumulation order per output value is fixed (channel-major, then tap),
/// independent of spatial position, so translated or tiled inputs reproduce
/// identical sums. Optionally fuses max(0, .) into the store.
void conv2d_forward_avx512(const float* in, int N, int C, int H, int W,
                           const float* w, const float* bias, int OC, int k,
                           int dilation, bool fuse_relu, float* out);

/// Weight/bias gradient of the convolution above, summed over the batch.
///   gout: (N, OC, H', W') upstream gradient
///   gw:   (OC, C, k, k) overwritten with the batch-summed gradient
///   gb:   (OC) overwritten with per-channel sums of gout
void conv2d_backward_weights_avx512(const float* in, int N, int C, int H, int W,
                                    const float* gout, int OC, int k,
                                    int dilation, float* gw, float* gb);

}  // namespace aseg::kern
