// AVX-512 kernels for the dilated convolutions. The layer shapes in this
// project are skinny (1..32 channels) with large spatial extents, which is a
// poor fit for generic GEMM libraries, so the convolution is computed
// directly: output columns are processed 48 at a time (three 16-lane
// registers) against an 8-wide block of output channels, with the nine
// filter taps fused into one accumulation pass. Ragged column tails use
// masked loads/stores; ragged channel blocks use zero-padded packed weights.
// Both entry points take the whole mini-batch so the weight packing is done
// once per call rather than once per sample.
//
// This translation unit is compiled with AVX-512 codegen and must only be
// entered after kern::avx512_available() returns true.

#include "aseg/conv_kernels.hpp"

#include <immintrin.h>

#include <algorithm>
#include <cstring>
#include <vector>

namespace aseg::kern {
namespace {

// One forward tile: 8 output channels x (NB*16) output columns at one row.
// wp is packed [c][tap][8] so every (c, tap) step reads 8 contiguous weights.
// Masks suppress lanes past the row end (masked loads also suppress the
// out-of-bounds access itself, not just the arithmetic).
template <int NB>
inline void fwd_tile(const float* ibase, long cstride, int C, int ntap,
                     const long* toff, const float* wp, const float* b8,
                     bool relu, float* obase, long ostride, int rmax,
                     __mmask16 m0, __mmask16 m1, __mmask16 m2) {
  // Every index into acc[][] below must be a compile-time constant after
  // unrolling, otherwise the register allocator is forced to keep the whole
  // accumulator array on the stack (a ~2x slowdown).
  const __mmask16 mv[3] = {m0, m1, m2};
  __m512 acc[8][NB];
#pragma GCC unroll 8
  for (int r = 0; r < 8; ++r) {
    const __m512 bv = _mm512_set1_ps(b8[r]);
    for (int nb = 0; nb < NB; ++nb) acc[r][nb] = bv;
  }
  const float* w8 = wp;
  for (int c = 0; c < C; ++c) {
    const float* ic = ibase + static_cast<long>(c) * cstride;
    for (int t = 0; t < ntap; ++t, w8 += 8) {
      const float* p = ic + toff[t];
      __m512 b[NB];
      for (int nb = 0; nb < NB; ++nb)
        b[nb] = _mm512_maskz_loadu_ps(mv[nb], p + 16 * nb);
#pragma GCC unroll 8
      for (int r = 0; r < 8; ++r) {
        const __m512 a = _mm512_set1_ps(w8[r]);
        for (int nb = 0; nb < NB; ++nb)
          acc[r][nb] = _mm512_fmadd_ps(a, b[nb], acc[r][nb]);
      }
    }
  }
  const __m512 zero = _mm512_setzero_ps();
#pragma GCC unroll 8
  for (int r = 0; r < 8; ++r) {
    if (r < rmax) {
      float* op = obase + static_cast<long>(r) * ostride;
      for (int nb = 0; nb < NB; ++nb) {
        __m512 v = acc[r][nb];
        if (relu) v = _mm512_max_ps(v, zero);
        _mm512_mask_storeu_ps(op + 16 * nb, mv[nb], v);
      }
    }
  }
}

// Forward pass over one sample, weights already packed.
void fwd_one(const float* in, int C, int H, int W, const float* wp,
             const float* bp, int OC, int k, int d, bool relu, float* out) {
  const int e = d * (k - 1);
  const long Hp = H - e, Wp = W - e;
  const int ntap = k * k;
  long toff[9];
  for (int t = 0; t < ntap; ++t)
    toff[t] = static_cast<long>(t / k) * d * W + static_cast<long>(t % k) * d;
  const int OB = (OC + 7) / 8;
  const long cstride = static_cast<long>(H) * W;
  const long ostride = Hp * Wp;
  for (long y = 0; y < Hp; ++y) {
    const float* irow = in + y * W;
    long x = 0;
    while (x < Wp) {
      const long rem = Wp - x;
      __mmask16 m[3] = {0xFFFF, 0xFFFF, 0xFFFF};
      int width;
      if (rem >= 48) {
        width = 48;
      } else if (rem > 32) {
        m[2] = static_cast<__mmask16>((1u << (rem - 32)) - 1);
        width = 48;
      } else if (rem > 16) {
        m[1] = static_cast<__mmask16>((1ull << (rem - 16)) - 1);
        width = 32;
      } else {
        m[0] = static_cast<__mmask16>((1ull << rem) - 1);
        width = 16;
      }
      for (int ob = 0; ob < OB; ++ob) {
        const float* wpb = wp + static_cast<size_t>(ob) * C * ntap * 8;
        const float* b8 = bp + static_cast<size_t>(ob) * 8;
        const int rmax = std::min(8, OC - ob * 8);
        float* obase = out + static_cast<size_t>(ob) * 8 * ostride + y * Wp + x;
        const float* ibase = irow + x;
        if (width == 48)
          fwd_tile<3>(ibase, cstride, C, ntap, toff, wpb, b8, relu, obase, ostride, rmax,
                      m[0], m[1], m[2]);
        else if (width == 32)
          fwd_tile<2>(ibase, cstride, C, ntap, toff, wpb, b8, relu, obase, ostride, rmax,
                      m[0], m[1], m[2]);
        else
          fwd_tile<1>(ibase, cstride, C, ntap, toff, wpb, b8, relu, obase, ostride, rmax,
                      m[0], m[1], m[2]);
      }
      x += std::min<long>(rem, width);
    }
  }
}

// One weight-gradient tile: a (TO x TC) block of channel pairs, reduced over
// every output pixel. Sixteen-lane partial sums per pair, horizontally
// reduced once at the end. Generic fallback for ragged block edges; the hot
// 4x4 case has a dedicated version below with individually named
// accumulators — an indexed accumulator array would be forced onto the
// stack by the register allocator.
template <int TO, int TC>
inline void bww_tile(const float* g, long gstride, long grow, const float* ip,
                     long istride, long irow, long Hp, long Wp, float* vals) {
  __m512 acc[TO][TC];
  for (int r = 0; r < TO; ++r)
    for (int s = 0; s < TC; ++s) acc[r][s] = _mm512_setzero_ps();
  for (long y = 0; y < Hp; ++y) {
    const float* gr[TO];
    const float* ir[TC];
    for (int r = 0; r < TO; ++r) gr[r] = g + static_cast<long>(r) * gstride + y * grow;
    for (int s = 0; s < TC; ++s) ir[s] = ip + static_cast<long>(s) * istride + y * irow;
    long x = 0;
    for (; x + 16 <= Wp; x += 16) {
      __m512 gv[TO], iv[TC];
      for (int r = 0; r < TO; ++r) gv[r] = _mm512_loadu_ps(gr[r] + x);
      for (int s = 0; s < TC; ++s) iv[s] = _mm512_loadu_ps(ir[s] + x);
      for (int r = 0; r < TO; ++r)
        for (int s = 0; s < TC; ++s)
          acc[r][s] = _mm512_fmadd_ps(gv[r], iv[s], acc[r][s]);
    }
    if (x < Wp) {
      const __mmask16 m = static_cast<__mmask16>((1u << (Wp - x)) - 1);
      __m512 gv[TO], iv[TC];
      for (int r = 0; r < TO; ++r) gv[r] = _mm512_maskz_loadu_ps(m, gr[r] + x);
      for (int s = 0; s < TC; ++s) iv[s] = _mm512_maskz_loadu_ps(m, ir[s] + x);
      for (int r = 0; r < TO; ++r)
        for (int s = 0; s < TC; ++s)
          acc[r][s] = _mm512_fmadd_ps(gv[r], iv[s], acc[r][s]);
    }
  }
  for (int r = 0; r < TO; ++r)
    for (int s = 0; s < TC; ++s) vals[r * TC + s] = _mm512_reduce_add_ps(acc[r][s]);
}

#define BWW_FMA16                                                              \
  a00 = _mm512_fmadd_ps(g0, i0, a00); a01 = _mm512_fmadd_ps(g0, i1, a01);     \
  a02 = _mm512_fmadd_ps(g0, i2, a02); a03 = _mm512_fmadd_ps(g0, i3, a03);     \
  a10 = _mm512_fmadd_ps(g1, i0, a10); a11 = _mm512_fmadd_ps(g1, i1, a11);     \
  a12 = _mm512_fmadd_ps(g1, i2, a12); a13 = _mm512_fmadd_ps(g1, i3, a13);     \
  a20 = _mm512_fmadd_ps(g2, i0, a20); a21 = _mm512_fmadd_ps(g2, i1, a21);     \
  a22 = _mm512_fmadd_ps(g2, i2, a22); a23 = _mm512_fmadd_ps(g2, i3, a23);     \
  a30 = _mm512_fmadd_ps(g3, i0, a30); a31 = _mm512_fmadd_ps(g3, i1, a31);     \
  a32 = _mm512_fmadd_ps(g3, i2, a32); a33 = _mm512_fmadd_ps(g3, i3, a33)

inline void bww_tile44(const float* g, long gstride, long grow, const float* ip,
                       long istride, long irow, long Hp, long Wp, float* vals) {
  __m512 a00, a01, a02, a03, a10, a11, a12, a13;
  __m512 a20, a21, a22, a23, a30, a31, a32, a33;
  a00 = a01 = a02 = a03 = a10 = a11 = a12 = a13 = _mm512_setzero_ps();
  a20 = a21 = a22 = a23 = a30 = a31 = a32 = a33 = _mm512_setzero_ps();
  for (long y = 0; y < Hp; ++y) {
    const float* g0p = g + y * grow;
    const float* g1p = g0p + gstride;
    const float* g2p = g1p + gstride;
    const float* g3p = g2p + gstride;
    const float* i0p = ip + y * irow;
    const float* i1p = i0p + istride;
    const float* i2p = i1p + istride;
    const float* i3p = i2p + istride;
    long x = 0;
    for (; x + 16 <= Wp; x += 16) {
      const __m512 g0 = _mm512_loadu_ps(g0p + x), g1 = _mm512_loadu_ps(g1p + x);
      const __m512 g2 = _mm512_loadu_ps(g2p + x), g3 = _mm512_loadu_ps(g3p + x);
      const __m512 i0 = _mm512_loadu_ps(i0p + x), i1 = _mm512_loadu_ps(i1p + x);
      const __m512 i2 = _mm512_loadu_ps(i2p + x), i3 = _mm512_loadu_ps(i3p + x);
      BWW_FMA16;
    }
    if (x < Wp) {
      const __mmask16 m = static_cast<__mmask16>((1u << (Wp - x)) - 1);
      const __m512 g0 = _mm512_maskz_loadu_ps(m, g0p + x), g1 = _mm512_maskz_loadu_ps(m, g1p + x);
      const __m512 g2 = _mm512_maskz_loadu_ps(m, g2p + x), g3 = _mm512_maskz_loadu_ps(m, g3p + x);
      const __m512 i0 = _mm512_maskz_loadu_ps(m, i0p + x), i1 = _mm512_maskz_loadu_ps(m, i1p + x);
      const __m512 i2 = _mm512_maskz_loadu_ps(m, i2p + x), i3 = _mm512_maskz_loadu_ps(m, i3p + x);
      BWW_FMA16;
    }
  }
  vals[0] = _mm512_reduce_add_ps(a00);  vals[1] = _mm512_reduce_add_ps(a01);
  vals[2] = _mm512_reduce_add_ps(a02);  vals[3] = _mm512_reduce_add_ps(a03);
  vals[4] = _mm512_reduce_add_ps(a10);  vals[5] = _mm512_reduce_add_ps(a11);
  vals[6] = _mm512_reduce_add_ps(a12);  vals[7] = _mm512_reduce_add_ps(a13);
  vals[8] = _mm512_reduce_add_ps(a20);  vals[9] = _mm512_reduce_add_ps(a21);
  vals[10] = _mm512_reduce_add_ps(a22); vals[11] = _mm512_reduce_add_ps(a23);
  vals[12] = _mm512_reduce_add_ps(a30); vals[13] = _mm512_reduce_add_ps(a31);
  vals[14] = _mm512_reduce_add_ps(a32); vals[15] = _mm512_reduce_add_ps(a33);
}

#undef BWW_FMA16

// Single-input-channel weight gradient (k == 3): the block path above would
// re-read the same gout plane once per tap, and with C == 1 there are no
// sibling channels to amortise that over. Instead one pass over a pair of
// gout planes feeds nine tap accumulators per channel, sharing the three
// shifted input vectors of each row between both channels and folding the
// bias reduction into the same sweep.
#define BWW_C1_ROW(LOADG, LOADI)                                               \
  const __m512 gv0 = LOADG(g0 + x), gv1 = LOADG(g1 + x);                       \
  b0 = _mm512_add_ps(b0, gv0);                                                 \
  b1 = _mm512_add_ps(b1, gv1);                                                 \
  __m512 iv;                                                                   \
  iv = LOADI(r0 + x);                                                          \
  a00 = _mm512_fmadd_ps(gv0, iv, a00); a10 = _mm512_fmadd_ps(gv1, iv, a10);    \
  iv = LOADI(r0 + x + d);                                                      \
  a01 = _mm512_fmadd_ps(gv0, iv, a01); a11 = _mm512_fmadd_ps(gv1, iv, a11);    \
  iv = LOADI(r0 + x + 2 * d);                                                  \
  a02 = _mm512_fmadd_ps(gv0, iv, a02); a12 = _mm512_fmadd_ps(gv1, iv, a12);    \
  iv = LOADI(r1 + x);                                                          \
  a03 = _mm512_fmadd_ps(gv0, iv, a03); a13 = _mm512_fmadd_ps(gv1, iv, a13);    \
  iv = LOADI(r1 + x + d);                                                      \
  a04 = _mm512_fmadd_ps(gv0, iv, a04); a14 = _mm512_fmadd_ps(gv1, iv, a14);    \
  iv = LOADI(r1 + x + 2 * d);                                                  \
  a05 = _mm512_fmadd_ps(gv0, iv, a05); a15 = _mm512_fmadd_ps(gv1, iv, a15);    \
  iv = LOADI(r2 + x);                                                          \
  a06 = _mm512_fmadd_ps(gv0, iv, a06); a16 = _mm512_fmadd_ps(gv1, iv, a16);    \
  iv = LOADI(r2 + x + d);                                                      \
  a07 = _mm512_fmadd_ps(gv0, iv, a07); a17 = _mm512_fmadd_ps(gv1, iv, a17);    \
  iv = LOADI(r2 + x + 2 * d);                                                  \
  a08 = _mm512_fmadd_ps(gv0, iv, a08); a18 = _mm512_fmadd_ps(gv1, iv, a18)
#define BWW_C1_LDF(p) _mm512_loadu_ps(p)
#define BWW_C1_LDM(p) _mm512_maskz_loadu_ps(m, p)

inline void bww_c1_pair(const float* g0p, const float* g1p, const float* inp,
                        int d, long W, long Hp, long Wp, float* w0, float* w1,
                        float* gb0, float* gb1) {
  __m512 a00, a01, a02, a03, a04, a05, a06, a07, a08;
  __m512 a10, a11, a12, a13, a14, a15, a16, a17, a18;
  a00 = a01 = a02 = a03 = a04 = a05 = a06 = a07 = a08 = _mm512_setzero_ps();
  a10 = a11 = a12 = a13 = a14 = a15 = a16 = a17 = a18 = _mm512_setzero_ps();
  __m512 b0 = _mm512_setzero_ps(), b1 = _mm512_setzero_ps();
  for (long y = 0; y < Hp; ++y) {
    const float* g0 = g0p + y * Wp;
    const float* g1 = g1p + y * Wp;
    const float* r0 = inp + y * W;
    const float* r1 = r0 + static_cast<long>(d) * W;
    const float* r2 = r1 + static_cast<long>(d) * W;
    long x = 0;
    for (; x + 16 <= Wp; x += 16) {
      BWW_C1_ROW(BWW_C1_LDF, BWW_C1_LDF);
    }
    if (x < Wp) {
      // Mask the input loads too: the rightmost taps of the last rows would
      // otherwise read past the end of the sample.
      const __mmask16 m = static_cast<__mmask16>((1u << (Wp - x)) - 1);
      BWW_C1_ROW(BWW_C1_LDM, BWW_C1_LDM);
    }
  }
  w0[0] += _mm512_reduce_add_ps(a00); w0[1] += _mm512_reduce_add_ps(a01);
  w0[2] += _mm512_reduce_add_ps(a02); w0[3] += _mm512_reduce_add_ps(a03);
  w0[4] += _mm512_reduce_add_ps(a04); w0[5] += _mm512_reduce_add_ps(a05);
  w0[6] += _mm512_reduce_add_ps(a06); w0[7] += _mm512_reduce_add_ps(a07);
  w0[8] += _mm512_reduce_add_ps(a08);
  *gb0 += _mm512_reduce_add_ps(b0);
  if (!w1) return;
  w1[0] += _mm512_reduce_add_ps(a10); w1[1] += _mm512_reduce_add_ps(a11);
  w1[2] += _mm512_reduce_add_ps(a12); w1[3] += _mm512_reduce_add_ps(a13);
  w1[4] += _mm512_reduce_add_ps(a14); w1[5] += _mm512_reduce_add_ps(a15);
  w1[6] += _mm512_reduce_add_ps(a16); w1[7] += _mm512_reduce_add_ps(a17);
  w1[8] += _mm512_reduce_add_ps(a18);
  *gb1 += _mm512_reduce_add_ps(b1);
}

#undef BWW_C1_ROW
#undef BWW_C1_LDF
#undef BWW_C1_LDM

// One block of the small-plane weight-gradient product: an eight-row strip of
// R[q][o] += sum_px col[q][px] * gt[px][o] over a panel of up to 32 output
// channels. Named accumulators; lanes past OC are masked.
inline void bww_gemm_row8(const float* col, long area, const float* gt, int OC,
                          __mmask16 m0, __mmask16 m1, float* R) {
  __m512 a0l, a0h, a1l, a1h, a2l, a2h, a3l, a3h;
  __m512 a4l, a4h, a5l, a5h, a6l, a6h, a7l, a7h;
  a0l = a0h = a1l = a1h = a2l = a2h = a3l = a3h = _mm512_setzero_ps();
  a4l = a4h = a5l = a5h = a6l = a6h = a7l = a7h = _mm512_setzero_ps();
  for (long px = 0; px < area; ++px) {
    const float* gr = gt + px * OC;
    const __m512 bl = _mm512_maskz_loadu_ps(m0, gr);
    const __m512 bh = _mm512_maskz_loadu_ps(m1, gr + 16);
    __m512 s;
    s = _mm512_set1_ps(col[0 * area + px]);
    a0l = _mm512_fmadd_ps(s, bl, a0l); a0h = _mm512_fmadd_ps(s, bh, a0h);
    s = _mm512_set1_ps(col[1 * area + px]);
    a1l = _mm512_fmadd_ps(s, bl, a1l); a1h = _mm512_fmadd_ps(s, bh, a1h);
    s = _mm512_set1_ps(col[2 * area + px]);
    a2l = _mm512_fmadd_ps(s, bl, a2l); a2h = _mm512_fmadd_ps(s, bh, a2h);
    s = _mm512_set1_ps(col[3 * area + px]);
    a3l = _mm512_fmadd_ps(s, bl, a3l); a3h = _mm512_fmadd_ps(s, bh, a3h);
    s = _mm512_set1_ps(col[4 * area + px]);
    a4l = _mm512_fmadd_ps(s, bl, a4l); a4h = _mm512_fmadd_ps(s, bh, a4h);
    s = _mm512_set1_ps(col[5 * area + px]);
    a5l = _mm512_fmadd_ps(s, bl, a5l); a5h = _mm512_fmadd_ps(s, bh, a5h);
    s = _mm512_set1_ps(col[6 * area + px]);
    a6l = _mm512_fmadd_ps(s, bl, a6l); a6h = _mm512_fmadd_ps(s, bh, a6h);
    s = _mm512_set1_ps(col[7 * area + px]);
    a7l = _mm512_fmadd_ps(s, bl, a7l); a7h = _mm512_fmadd_ps(s, bh, a7h);
  }
  float* r = R;
  a0l = _mm512_add_ps(a0l, _mm512_maskz_loadu_ps(m0, r));
  a0h = _mm512_add_ps(a0h, _mm512_maskz_loadu_ps(m1, r + 16));
  _mm512_mask_storeu_ps(r, m0, a0l); _mm512_mask_storeu_ps(r + 16, m1, a0h);
  r += OC;
  a1l = _mm512_add_ps(a1l, _mm512_maskz_loadu_ps(m0, r));
  a1h = _mm512_add_ps(a1h, _mm512_maskz_loadu_ps(m1, r + 16));
  _mm512_mask_storeu_ps(r, m0, a1l); _mm512_mask_storeu_ps(r + 16, m1, a1h);
  r += OC;
  a2l = _mm512_add_ps(a2l, _mm512_maskz_loadu_ps(m0, r));
  a2h = _mm512_add_ps(a2h, _mm512_maskz_loadu_ps(m1, r + 16));
  _mm512_mask_storeu_ps(r, m0, a2l); _mm512_mask_storeu_ps(r + 16, m1, a2h);
  r += OC;
  a3l = _mm512_add_ps(a3l, _mm512_maskz_loadu_ps(m0, r));
  a3h = _mm512_add_ps(a3h, _mm512_maskz_loadu_ps(m1, r + 16));
  _mm512_mask_storeu_ps(r, m0, a3l); _mm512_mask_storeu_ps(r + 16, m1, a3h);
  r += OC;
  a4l = _mm512_add_ps(a4l, _mm512_maskz_loadu_ps(m0, r));
  a4h = _mm512_add_ps(a4h, _mm512_maskz_loadu_ps(m1, r + 16));
  _mm512_mask_storeu_ps(r, m0, a4l); _mm512_mask_storeu_ps(r + 16, m1, a4h);
  r += OC;
  a5l = _mm512_add_ps(a5l, _mm512_maskz_loadu_ps(m0, r));
  a5h = _mm512_add_ps(a5h, _mm512_maskz_loadu_ps(m1, r + 16));
  _mm512_mask_storeu_ps(r, m0, a5l); _mm512_mask_storeu_ps(r + 16, m1, a5h);
  r += OC;
  a6l = _mm512_add_ps(a6l, _mm512_maskz_loadu_ps(m0, r));
  a6h = _mm512_add_ps(a6h, _mm512_maskz_loadu_ps(m1, r + 16));
  _mm512_mask_storeu_ps(r, m0, a6l); _mm512_mask_storeu_ps(r + 16, m1, a6h);
  r += OC;
  a7l = _mm512_add_ps(a7l, _mm512_maskz_loadu_ps(m0, r));
  a7h = _mm512_add_ps(a7h, _mm512_maskz_loadu_ps(m1, r + 16));
  _mm512_mask_storeu_ps(r, m0, a7l); _mm512_mask_storeu_ps(r + 16, m1, a7h);
}

}  // namespace

void conv2d_forward_avx512(const float* in, int N, int C, int H, int W,
                           const float* w, const float* bias, int OC, int k,
                           int dilation, bool fuse_relu, float* out) {
  const int e = dilation * (k - 1);
  const long Hp = H - e, Wp = W - e;
  const int ntap = k * k;
  const int OB = (OC + 7) / 8;
  std::vector<float> wp(static_cast<size_t>(OB) * C * ntap * 8, 0.0f);
  std::vector<float> bp(static_cast<size_t>(OB) * 8, 0.0f);
  for (int o = 0; o < OC; ++o) {
    const int ob = o / 8, r = o % 8;
    for (int c = 0; c < C; ++c)
      for (int t = 0; t < ntap; ++t)
        wp[((static_cast<size_t>(ob) * C + c) * ntap + t) * 8 + r] =
            w[(static_cast<size_t>(o) * C + c) * ntap + t];
    bp[static_cast<size_t>(ob) * 8 + r] = bias ? bias[o] : 0.0f;
  }
  const size_t in_sz = static_cast<size_t>(C) * H * W;
  const size_t out_sz = static_cast<size_t>(OC) * Hp * Wp;
  for (int n = 0; n < N; ++n)
    fwd_one(in + n * in_sz, C, H, W, wp.data(), bp.data(), OC, k, dilation,
            fuse_relu, out + n * out_sz);
}

void conv2d_backward_weights_avx512(const float* in, int N, int C, int H, int W,
                                    const float* gout, int OC, int k,
                                    int dilation, float* gw, float* gb) {
  const int d = dilation;
  const int e = d * (k - 1);
  const long Hp = H - e, Wp = W - e;
  const int ntap = k * k;
  const long area = Hp * Wp;
  const long cstride = static_cast<long>(H) * W;
  const size_t in_sz = static_cast<size_t>(C) * H * W;
  const size_t out_sz = static_cast<size_t>(OC) * area;

  std::memset(gw, 0, sizeof(float) * static_cast<size_t>(OC) * C * ntap);
  std::memset(gb, 0, sizeof(float) * OC);

  if (C == 1 && k == 3) {
    for (int n = 0; n < N; ++n) {
      const float* in_n = in + n * in_sz;
      const float* gout_n = gout + n * out_sz;
      for (int o0 = 0; o0 < OC; o0 += 2) {
        const bool pair = o0 + 1 < OC;
        const float* g0 = gout_n + static_cast<size_t>(o0) * area;
        bww_c1_pair(g0, pair ? g0 + area : g0, in_n, d, W, Hp, Wp,
                    gw + static_cast<size_t>(o0) * ntap,
                    pair ? gw + (static_cast<size_t>(o0) + 1) * ntap : nullptr,
                    gb + o0, pair ? gb + o0 + 1 : nullptr);
      }
    }
    return;
  }

  // Narrow output planes (deep high-dilation layers): the tile path would
  // mask off most of every lane and spend its time in per-tile reduction
  // trees. Lower each sample's taps into an im2col matrix instead and reduce
  // the whole gradient as one (C*ntap x area) x (area x OC) product; R
  // accumulates over the batch and is unpacked into gw once at the end.
  if (Wp < 16 && static_cast<size_t>(C) * ntap * area <= (1u << 19)) {
    const long M = static_cast<long>(C) * ntap;
    std::vector<float> col(static_cast<size_t>(M) * area);
    std::vector<float> gt(static_cast<size_t>(area) * OC);
    std::vector<float> R(static_cast<size_t>(M) * OC, 0.0f);
    const __mmask16 mw = static_cast<__mmask16>((1u << Wp) - 1);
    for (int n = 0; n < N; ++n) {
      const float* in_n = in + n * in_sz;
      const float* gout_n = gout + n * out_sz;
      float* cq = col.data();
      for (int c = 0; c < C; ++c)
        for (int t = 0; t < ntap; ++t) {
          const float* src = in_n + c * cstride +
                             static_cast<long>(t / k) * d * W +
                             static_cast<long>(t % k) * d;
          for (long y = 0; y < Hp; ++y, cq += Wp)
            _mm512_mask_storeu_ps(cq, mw,
                                  _mm512_maskz_loadu_ps(mw, src + y * W));
        }
      for (int o = 0; o < OC; ++o) {
        const float* g = gout_n + static_cast<size_t>(o) * area;
        float s = 0.0f;
        for (long px = 0; px < area; ++px) {
          gt[px * OC + o] = g[px];
          s += g[px];
        }
        gb[o] += s;
      }
      for (int o0 = 0; o0 < OC; o0 += 32) {
        const int rem = OC - o0;
        const __mmask16 m0 =
            rem >= 16 ? static_cast<__mmask16>(0xffff)
                      : static_cast<__mmask16>((1u << rem) - 1);
        const __mmask16 m1 =
            rem >= 32 ? static_cast<__mmask16>(0xffff)
                      : (rem > 16 ? static_cast<__mmask16>((1u << (rem - 16)) - 1)
                                  : static_cast<__mmask16>(0));
        long q = 0;
        for (; q + 8 <= M; q += 8)
          bww_gemm_row8(col.data() + q * area, area, gt.data() + o0, OC, m0, m1,
                        R.data() + q * OC + o0);
        for (; q < M; ++q) {
          __m512 al = _mm512_setzero_ps(), ah = _mm512_setzero_ps();
          const float* cr = col.data() + q * area;
          for (long px = 0; px < area; ++px) {
            const float* gr = gt.data() + px * OC + o0;
            const __m512 s = _mm512_set1_ps(cr[px]);
            al = _mm512_fmadd_ps(s, _mm512_maskz_loadu_ps(m0, gr), al);
            ah = _mm512_fmadd_ps(s, _mm512_maskz_loadu_ps(m1, gr + 16), ah);
          }
          float* r = R.data() + q * OC + o0;
          al = _mm512_add_ps(al, _mm512_maskz_loadu_ps(m0, r));
          ah = _mm512_add_ps(ah, _mm512_maskz_loadu_ps(m1, r + 16));
          _mm512_mask_storeu_ps(r, m0, al);
          _mm512_mask_storeu_ps(r + 16, m1, ah);
        }
      }
    }
    for (int o = 0; o < OC; ++o)
      for (long q = 0; q < M; ++q)
        gw[static_cast<size_t>(o) * M + q] = R[q * OC + o];
    return;
  }

  for (int n = 0; n < N; ++n) {
    const float* in_n = in + n * in_sz;
    const float* gout_n = gout + n * out_sz;

    for (int o = 0; o < OC; ++o) {
      const float* g = gout_n + static_cast<size_t>(o) * area;
      __m512 acc = _mm512_setzero_ps();
      long i = 0;
      for (; i + 16 <= area; i += 16) acc = _mm512_add_ps(acc, _mm512_loadu_ps(g + i));
      float s = _mm512_reduce_add_ps(acc);
      for (; i < area; ++i) s += g[i];
      gb[o] += s;
    }

    // Channel blocks outer, taps inner: one (4 x 4)-channel block pass keeps
    // its eight planes resident in L2 while all k*k taps reduce over them,
    // instead of re-streaming every plane from L3 once per tap.
    for (int o0 = 0; o0 < OC;) {
      const int to = (OC - o0 >= 4) ? 4 : (OC - o0 >= 2 ? 2 : 1);
      for (int c0 = 0; c0 < C;) {
        const int tc = (C - c0 >= 4) ? 4 : (C - c0 >= 2 ? 2 : 1);
        for (int t = 0; t < ntap; ++t) {
          const long off = static_cast<long>(t / k) * d * W + static_cast<long>(t % k) * d;
          const float* g = gout_n + static_cast<size_t>(o0) * area;
          const float* ip = in_n + static_cast<size_t>(c0) * cstride + off;
          float vals[16];
          switch (to * 8 + tc) {
            case 4 * 8 + 4: bww_tile44(g, area, Wp, ip, cstride, W, Hp, Wp, vals); break;
            case 4 * 8 + 2: bww_tile<4, 2>(g, area, Wp, ip, cstride, W, Hp, Wp, vals); break;
            case 4 * 8 + 1: bww_tile<4, 1>(g, area, Wp, ip, cstride, W, Hp, Wp, vals); break;
            case 2 * 8 + 4: bww_tile<2, 4>(g, area, Wp, ip, cstride, W, Hp, Wp, vals); break;
            case 2 * 8 + 2: bww_tile<2, 2>(g, area, Wp, ip, cstride, W, Hp, Wp, vals); break;
            case 2 * 8 + 1: bww_tile<2, 1>(g, area, Wp, ip, cstride, W, Hp, Wp, vals); break;
            case 1 * 8 + 4: bww_tile<1, 4>(g, area, Wp, ip, cstride, W, Hp, Wp, vals); break;
            case 1 * 8 + 2: bww_tile<1, 2>(g, area, Wp, ip, cstride, W, Hp, Wp, vals); break;
            default: bww_tile<1, 1>(g, area, Wp, ip, cstride, W, Hp, Wp, vals); break;
          }
          for (int r = 0; r < to; ++r)
            for (int s = 0; s < tc; ++s)
              gw[((static_cast<size_t>(o0) + r) * C + (c0 + s)) * ntap + t] +=
                  vals[r * tc + s];
        }
        c0 += tc;
      }
      o0 += to;
    }
  }
}

}  // namespace aseg::kern
