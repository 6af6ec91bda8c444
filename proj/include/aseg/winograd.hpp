#pragma once
#include <vector>

namespace aseg {

/// F(2x2, 3x3) Winograd engine for the training path of dilated 3x3
/// convolutions. A dilation-d convolution splits into d^2 independent unit
/// convolutions on the (row mod d, col mod d) sublattices; each runs as
/// 2x2-output Winograd tiles, turning the 9 multiplies per output into 16/4
/// and cutting convolution arithmetic 2.25x. The three training passes all
/// live in the same transform domain:
///   forward:          M_k = U_k V_k            Y = A^T (M) A per tile
///   weight gradient:  dU_k = dM_k V_k^T        dw = G^T (sum dU) G
///   input gradient:   dV_k = U_k^T dM_k        dx = B (dV) B^T per tile
/// with U = G w G^T, V = B^T x B, dM = A dy A^T. All transform constants are
/// 0, +-1, +-1/2, so results match the direct kernels to rounding error.
///
/// Inference and the public conv2d ops stay on the direct kernels; only the
/// batched training passes route here (the transforms only pay for
/// themselves when the 16 coefficient GEMMs are large).
class WinogradConv {
 public:
  /// AVX-512 is required; callers fall back to the direct kernels otherwise.
  static bool available();

  /// Geometry this engine accepts: 3x3 kernels, power-of-two dilations up to
  /// 16 (the canonical schedule's 3x3 layers), and channel counts the GEMM
  /// microkernels can tile.
  static bool eligible(int C, int OC, int k, int dilation);

  /// out(N,OC,H-2d,W-2d) = dilated valid conv of in(N,C,H,W) with
  /// w(OC,C,3,3) + bias, optionally fused ReLU.
  void forward(const float* in, int N, int C, int H, int W, const float* w,
               const float* bias, int OC, int dilation, bool relu, float* out);

  /// Gradients for the same geometry: gw(OC,C,3,3) and gb(OC) are written
  /// (not accumulated); gin(N,C,H,W), written when non-null, is the full
  /// input gradient. `gout` is the gradient wrt the convolution output.
  /// When `act` (the forward pass's post-ReLU output, same shape as gout) is
  /// non-null, the ReLU backward is fused: gout lanes where act == 0 are
  /// dropped as they are loaded, replacing a separate masking pass over the
  /// gradient planes. Pass act == nullptr if gout is already masked.
  void backward(const float* in, int N, int C, int H, int W, const float* w,
                const float* gout, const float* act, int OC, int dilation,
                float* gw, float* gb, float* gin);

 private:
  std::vector<float> u_, ut_, v_, m_, dm_, du_;
};

}  // namespace aseg
