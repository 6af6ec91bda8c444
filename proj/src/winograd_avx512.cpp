// F(2x2,3x3) Winograd transforms for the batched training passes, AVX-512.
//
// Transform constants (all exactly representable, so the only rounding is in
// the products and sums themselves):
//   B^T = [1 0 -1 0; 0 1 1 0; 0 -1 1 0; 0 1 0 -1]   input,  V = B^T x B
//   G   = [1 0 0; 1/2 1/2 1/2; 1/2 -1/2 1/2; 0 0 1] weight, U = G w G^T
//   A^T = [1 1 1 0; 0 1 -1 -1]                      output, Y = A^T M A
// and the adjoints (exact transposes) drive the two gradient passes.
//
// Lane geometry: dilation d splits the convolution into d^2 independent unit
// convolutions on the (row mod d, col mod d) sublattices. One SIMD group of
// 16 lanes holds the tiles of *all* column residues inside a window of 32
// consecutive output columns: lane l is the tile with column residue l % d
// at tile column l / d. With d a power of two (<= 16) the tile's j-th column
// lives at window offset 2d*(l/d) + d*j + (l%d), so j in {0,1} is a single
// in-register permutation of two contiguous loads and j in {2,3} repeats the
// same permutation on a window shifted 2d columns right. Everything outside
// the plane is masked to zero on load and masked off on store, which keeps
// edge tiles exact: masked-off inputs only ever feed discarded outputs.
#include "aseg/winograd.hpp"

#include <immintrin.h>

#include <cstring>

#include "aseg/conv_kernels.hpp"

namespace aseg {
namespace {

// Tiles per transform chunk: 16 lanes x kMaxGroups. Sized so one chunk's V,
// M and dM panels (16 * channels * 192 floats each at 32 channels) sit in L2
// beside the transformed weights.
constexpr int kMaxGroups = 15;

struct Group {
  int a;   // output row residue (mod d)
  int tr;  // Winograd tile row on that row sublattice
  int x0;  // first output column of the 32-column window
};

struct Tables {
  __m512i j0, j1;        // window columns -> lanes of tile column j = 0 / 1
  __m512i st_lo, st_hi;  // lanes of (j=0, j=1) -> window columns 0..15 / 16..31
};

Tables make_tables(int d) {
  alignas(64) int j0[16], j1[16], lo[16], hi[16];
  for (int l = 0; l < 16; ++l) {
    const int tw = l / d, b = l % d;
    j0[l] = 2 * d * tw + b;
    j1[l] = 2 * d * tw + d + b;
  }
  for (int col = 0; col < 32; ++col) {
    const int o = col % (2 * d);
    const int lane = col / (2 * d) * d + o % d;
    (col < 16 ? lo : hi)[col % 16] = lane + 16 * (o / d);
  }
  Tables t;
  t.j0 = _mm512_load_si512(j0);
  t.j1 = _mm512_load_si512(j1);
  t.st_lo = _mm512_load_si512(lo);
  t.st_hi = _mm512_load_si512(hi);
  return t;
}

inline __mmask16 mask16(int remaining) {
  if (remaining >= 16) return static_cast<__mmask16>(0xffff);
  if (remaining <= 0) return 0;
  return static_cast<__mmask16>((1u << remaining) - 1);
}

// V[k][c][t] = B^T x B over the chunk's tiles, straight from the (strided)
// input planes. Rows past the bottom edge and columns past the right edge
// enter as zeros; they only ever feed outputs the store masks discard.
void in_transform_chunk(const float* inb, int C, int H, int W, int d,
                        const Tables& t, const Group* gs, int ng, int Tc,
                        float* v, long ks) {
  for (int c = 0; c < C; ++c) {
    const float* plane = inb + static_cast<long>(c) * H * W;
    float* vc = v + static_cast<long>(c) * Tc;
    for (int gi = 0; gi < ng; ++gi) {
      const Group& g = gs[gi];
      const __mmask16 m0 = mask16(W - g.x0);
      const __mmask16 m1 = mask16(W - g.x0 - 16);
      const __mmask16 m2 = mask16(W - g.x0 - 2 * d);
      const __mmask16 m3 = mask16(W - g.x0 - 2 * d - 16);
      const int ir0 = g.a + 2 * d * g.tr;
      __m512 x[4][4];
#pragma GCC unroll 4
      for (int r = 0; r < 4; ++r) {
        const int ir = ir0 + d * r;
        if (ir >= H) {
          x[r][0] = x[r][1] = x[r][2] = x[r][3] = _mm512_setzero_ps();
          continue;
        }
        const float* row = plane + static_cast<long>(ir) * W + g.x0;
        const __m512 z0 = _mm512_maskz_loadu_ps(m0, row);
        const __m512 z1 = _mm512_maskz_loadu_ps(m1, row + 16);
        const __m512 z2 = _mm512_maskz_loadu_ps(m2, row + 2 * d);
        const __m512 z3 = _mm512_maskz_loadu_ps(m3, row + 2 * d + 16);
        x[r][0] = _mm512_permutex2var_ps(z0, t.j0, z1);
        x[r][1] = _mm512_permutex2var_ps(z0, t.j1, z1);
        x[r][2] = _mm512_permutex2var_ps(z2, t.j0, z3);
        x[r][3] = _mm512_permutex2var_ps(z2, t.j1, z3);
      }
      __m512 w4[4][4];
#pragma GCC unroll 4
      for (int r = 0; r < 4; ++r) {  // B^T along tile columns
        w4[r][0] = _mm512_sub_ps(x[r][0], x[r][2]);
        w4[r][1] = _mm512_add_ps(x[r][1], x[r][2]);
        w4[r][2] = _mm512_sub_ps(x[r][2], x[r][1]);
        w4[r][3] = _mm512_sub_ps(x[r][1], x[r][3]);
      }
      float* q = vc + gi * 16;
#pragma GCC unroll 4
      for (int j = 0; j < 4; ++j) {  // B^T along tile rows
        _mm512_storeu_ps(q + (0 * 4 + j) * ks, _mm512_sub_ps(w4[0][j], w4[2][j]));
        _mm512_storeu_ps(q + (1 * 4 + j) * ks, _mm512_add_ps(w4[1][j], w4[2][j]));
        _mm512_storeu_ps(q + (2 * 4 + j) * ks, _mm512_sub_ps(w4[2][j], w4[1][j]));
        _mm512_storeu_ps(q + (3 * 4 + j) * ks, _mm512_sub_ps(w4[1][j], w4[3][j]));
      }
    }
  }
}

// Y = A^T M A per tile, plus bias/ReLU, interleaved back into the strided
// output planes under the edge masks.
void out_transform_chunk(const float* m, int OC, int Tc, const Tables& t,
                         const Group* gs, int ng, int d, int Hp, int Wp,
                         const float* bias, bool relu, float* outb, long ks) {
  const __m512 vz = _mm512_setzero_ps();
  for (int oc = 0; oc < OC; ++oc) {
    const __m512 vb = bias ? _mm512_set1_ps(bias[oc]) : vz;
    float* plane = outb + static_cast<long>(oc) * Hp * Wp;
    const float* mc = m + static_cast<long>(oc) * Tc;
    for (int gi = 0; gi < ng; ++gi) {
      const Group& g = gs[gi];
      const float* q = mc + gi * 16;
      __m512 mm[4][4];
#pragma GCC unroll 16
      for (int k = 0; k < 16; ++k)
        mm[k >> 2][k & 3] = _mm512_loadu_ps(q + k * ks);
      __m512 s0[4], s1[4];
#pragma GCC unroll 4
      for (int j = 0; j < 4; ++j) {  // A^T along tile rows
        s0[j] = _mm512_add_ps(_mm512_add_ps(mm[0][j], mm[1][j]), mm[2][j]);
        s1[j] = _mm512_sub_ps(_mm512_sub_ps(mm[1][j], mm[2][j]), mm[3][j]);
      }
      // A^T along tile columns, then bias and activation.
      __m512 y00 = _mm512_add_ps(_mm512_add_ps(_mm512_add_ps(s0[0], s0[1]), s0[2]), vb);
      __m512 y01 = _mm512_add_ps(_mm512_sub_ps(_mm512_sub_ps(s0[1], s0[2]), s0[3]), vb);
      __m512 y10 = _mm512_add_ps(_mm512_add_ps(_mm512_add_ps(s1[0], s1[1]), s1[2]), vb);
      __m512 y11 = _mm512_add_ps(_mm512_sub_ps(_mm512_sub_ps(s1[1], s1[2]), s1[3]), vb);
      if (relu) {
        y00 = _mm512_max_ps(y00, vz);
        y01 = _mm512_max_ps(y01, vz);
        y10 = _mm512_max_ps(y10, vz);
        y11 = _mm512_max_ps(y11, vz);
      }
      const __mmask16 mlo = mask16(Wp - g.x0);
      const __mmask16 mhi = mask16(Wp - g.x0 - 16);
      const int or0 = g.a + 2 * d * g.tr;
      if (or0 < Hp) {
        float* row = plane + static_cast<long>(or0) * Wp + g.x0;
        _mm512_mask_storeu_ps(row, mlo, _mm512_permutex2var_ps(y00, t.st_lo, y01));
        _mm512_mask_storeu_ps(row + 16, mhi, _mm512_permutex2var_ps(y00, t.st_hi, y01));
      }
      const int or1 = or0 + d;
      if (or1 < Hp) {
        float* row = plane + static_cast<long>(or1) * Wp + g.x0;
        _mm512_mask_storeu_ps(row, mlo, _mm512_permutex2var_ps(y10, t.st_lo, y11));
        _mm512_mask_storeu_ps(row + 16, mhi, _mm512_permutex2var_ps(y10, t.st_hi, y11));
      }
    }
  }
}

// dM[k][oc][t] = A dy A^T per tile from the upstream gradient planes, with
// the per-channel gradient sum (the bias gradient) folded into the same
// loads. Lanes of missing outputs load as zero, which is what makes the
// tail-lane products in both gradient GEMMs vanish exactly.
void dy_expand_chunk(const float* goutb, const float* actb, int OC, int Tc,
                     const Tables& t, const Group* gs, int ng, int d, int Hp,
                     int Wp, float* dm, float* gb, long ks) {
  const __m512 vz = _mm512_setzero_ps();
  for (int oc = 0; oc < OC; ++oc) {
    const long poff = static_cast<long>(oc) * Hp * Wp;
    const float* plane = goutb + poff;
    const float* aplane = actb ? actb + poff : nullptr;
    float* dc = dm + static_cast<long>(oc) * Tc;
    __m512 sum = vz;
    for (int gi = 0; gi < ng; ++gi) {
      const Group& g = gs[gi];
      const __mmask16 mlo = mask16(Wp - g.x0);
      const __mmask16 mhi = mask16(Wp - g.x0 - 16);
      const int or0 = g.a + 2 * d * g.tr;
      __m512 dy[2][2];
#pragma GCC unroll 2
      for (int ro = 0; ro < 2; ++ro) {
        const int orr = or0 + d * ro;
        if (orr >= Hp) {
          dy[ro][0] = dy[ro][1] = vz;
          continue;
        }
        const long roff = static_cast<long>(orr) * Wp + g.x0;
        const float* row = plane + roff;
        __mmask16 klo = mlo, khi = mhi;
        if (aplane) {  // fused ReLU backward: drop lanes the ReLU clamped
          const float* arow = aplane + roff;
          klo &= _mm512_cmp_ps_mask(_mm512_maskz_loadu_ps(mlo, arow), vz,
                                    _CMP_GT_OQ);
          khi &= _mm512_cmp_ps_mask(_mm512_maskz_loadu_ps(mhi, arow + 16), vz,
                                    _CMP_GT_OQ);
        }
        const __m512 z0 = _mm512_maskz_loadu_ps(klo, row);
        const __m512 z1 = _mm512_maskz_loadu_ps(khi, row + 16);
        dy[ro][0] = _mm512_permutex2var_ps(z0, t.j0, z1);
        dy[ro][1] = _mm512_permutex2var_ps(z0, t.j1, z1);
      }
      sum = _mm512_add_ps(sum, _mm512_add_ps(_mm512_add_ps(dy[0][0], dy[0][1]),
                                             _mm512_add_ps(dy[1][0], dy[1][1])));
      __m512 e[2][4];
#pragma GCC unroll 2
      for (int ro = 0; ro < 2; ++ro) {  // A along tile columns
        e[ro][0] = dy[ro][0];
        e[ro][1] = _mm512_add_ps(dy[ro][0], dy[ro][1]);
        e[ro][2] = _mm512_sub_ps(dy[ro][0], dy[ro][1]);
        e[ro][3] = _mm512_sub_ps(vz, dy[ro][1]);
      }
      float* q = dc + gi * 16;
#pragma GCC unroll 4
      for (int j = 0; j < 4; ++j) {  // A along tile rows
        _mm512_storeu_ps(q + (0 * 4 + j) * ks, e[0][j]);
        _mm512_storeu_ps(q + (1 * 4 + j) * ks, _mm512_add_ps(e[0][j], e[1][j]));
        _mm512_storeu_ps(q + (2 * 4 + j) * ks, _mm512_sub_ps(e[0][j], e[1][j]));
        _mm512_storeu_ps(q + (3 * 4 + j) * ks, _mm512_sub_ps(vz, e[1][j]));
      }
    }
    gb[oc] += _mm512_reduce_add_ps(sum);
  }
}

// dx = B dV B^T per tile, accumulated into the input-gradient planes.
// Neighboring tiles overlap by two columns/rows, so the stores are
// read-modify-write; groups run strictly in order, which keeps the
// overlapping windows (j in {0,1} vs {2,3}, and successive tile rows)
// correct and the result bit-reproducible.
void din_scatter_chunk(const float* dv, int C, int Tc, const Tables& t,
                       const Group* gs, int ng, int d, int H, int W,
                       float* ginb, long ks) {
  const __m512 vz = _mm512_setzero_ps();
  for (int c = 0; c < C; ++c) {
    float* plane = ginb + static_cast<long>(c) * H * W;
    const float* vc = dv + static_cast<long>(c) * Tc;
    for (int gi = 0; gi < ng; ++gi) {
      const Group& g = gs[gi];
      const float* q = vc + gi * 16;
      __m512 v4[4][4];
#pragma GCC unroll 16
      for (int k = 0; k < 16; ++k)
        v4[k >> 2][k & 3] = _mm512_loadu_ps(q + k * ks);
      __m512 h[4][4];
#pragma GCC unroll 4
      for (int j = 0; j < 4; ++j) {  // B along tile rows
        h[0][j] = v4[0][j];
        h[1][j] = _mm512_add_ps(_mm512_sub_ps(v4[1][j], v4[2][j]), v4[3][j]);
        h[2][j] = _mm512_add_ps(_mm512_sub_ps(v4[1][j], v4[0][j]), v4[2][j]);
        h[3][j] = _mm512_sub_ps(vz, v4[3][j]);
      }
      const __mmask16 m0 = mask16(W - g.x0);
      const __mmask16 m1 = mask16(W - g.x0 - 16);
      const __mmask16 m2 = mask16(W - g.x0 - 2 * d);
      const __mmask16 m3 = mask16(W - g.x0 - 2 * d - 16);
      // The gradient planes start uninitialized: each cell's first writer
      // plain-stores and later writers accumulate. For a row not yet touched
      // by the previous tile row, the only earlier writers are this window's
      // first store pair (cols [x0+2d, x0+32) of the second pair) and the
      // previous window's second pair (cols [x0, x0+2d) of the first pair),
      // so the read-modify-write load masks shrink to those overlaps.
      const __mmask16 ov0 = g.x0 > 0 ? mask16(2 * d) : static_cast<__mmask16>(0);
      const __mmask16 ov1 = g.x0 > 0 ? mask16(2 * d - 16) : static_cast<__mmask16>(0);
      const __mmask16 ov2 = mask16(32 - 2 * d);
      const __mmask16 ov3 = mask16(16 - 2 * d);
      const int ir0 = g.a + 2 * d * g.tr;
#pragma GCC unroll 4
      for (int r = 0; r < 4; ++r) {
        const int ir = ir0 + d * r;
        if (ir >= H) continue;
        const bool seen = g.tr > 0 && r < 2;  // row written by previous tile row
        const __mmask16 a0 = seen ? m0 : static_cast<__mmask16>(ov0 & m0);
        const __mmask16 a1 = seen ? m1 : static_cast<__mmask16>(ov1 & m1);
        const __mmask16 a2 = seen ? m2 : static_cast<__mmask16>(ov2 & m2);
        const __mmask16 a3 = seen ? m3 : static_cast<__mmask16>(ov3 & m3);
        // B along tile columns.
        const __m512 x0 = h[r][0];
        const __m512 x1 = _mm512_add_ps(_mm512_sub_ps(h[r][1], h[r][2]), h[r][3]);
        const __m512 x2 = _mm512_add_ps(_mm512_sub_ps(h[r][1], h[r][0]), h[r][2]);
        const __m512 x3 = _mm512_sub_ps(vz, h[r][3]);
        float* row = plane + static_cast<long>(ir) * W + g.x0;
        __m512 s = _mm512_permutex2var_ps(x0, t.st_lo, x1);
        _mm512_mask_storeu_ps(row, m0, _mm512_add_ps(_mm512_maskz_loadu_ps(a0, row), s));
        s = _mm512_permutex2var_ps(x0, t.st_hi, x1);
        _mm512_mask_storeu_ps(row + 16, m1,
                              _mm512_add_ps(_mm512_maskz_loadu_ps(a1, row + 16), s));
        float* row2 = row + 2 * d;
        s = _mm512_permutex2var_ps(x2, t.st_lo, x3);
        _mm512_mask_storeu_ps(row2, m2, _mm512_add_ps(_mm512_maskz_loadu_ps(a2, row2), s));
        s = _mm512_permutex2var_ps(x2, t.st_hi, x3);
        _mm512_mask_storeu_ps(row2 + 16, m3,
                              _mm512_add_ps(_mm512_maskz_loadu_ps(a3, row2 + 16), s));
      }
    }
  }
}

// C[r][t] = sum_k A[r][k] * B[k][t]: the per-coefficient GEMM of the forward
// pass (M = U V) and of the input-gradient pass (dV = U^T dM). A is the
// small transformed-weight matrix, B and C are tile panels.
// As in the direct kernels, every acc[][] index is compile-time constant
// after unrolling so the accumulators live in registers. The first k
// iteration is peeled so the accumulators start as products instead of
// being zeroed: with kk as small as the channel count, the prologue is a
// measurable share of the tile.
template <int NR, int NT>
inline void gemm_bcast_tile(const float* a, long lda, const float* b, long ldb,
                            float* c, long ldc, int kk) {
  __m512 acc[NR][NT];
  {
    __m512 bv[NT];
#pragma GCC unroll 4
    for (int nt = 0; nt < NT; ++nt) bv[nt] = _mm512_loadu_ps(b + nt * 16);
#pragma GCC unroll 8
    for (int r = 0; r < NR; ++r) {
      const __m512 av = _mm512_set1_ps(a[r * lda]);
#pragma GCC unroll 4
      for (int nt = 0; nt < NT; ++nt) acc[r][nt] = _mm512_mul_ps(av, bv[nt]);
    }
  }
  for (int k = 1; k < kk; ++k) {
    __m512 bv[NT];
#pragma GCC unroll 4
    for (int nt = 0; nt < NT; ++nt)
      bv[nt] = _mm512_loadu_ps(b + static_cast<long>(k) * ldb + nt * 16);
#pragma GCC unroll 8
    for (int r = 0; r < NR; ++r) {
      const __m512 av = _mm512_set1_ps(a[r * lda + k]);
#pragma GCC unroll 4
      for (int nt = 0; nt < NT; ++nt)
        acc[r][nt] = _mm512_fmadd_ps(av, bv[nt], acc[r][nt]);
    }
  }
#pragma GCC unroll 8
  for (int r = 0; r < NR; ++r)
#pragma GCC unroll 4
    for (int nt = 0; nt < NT; ++nt)
      _mm512_storeu_ps(c + r * ldc + nt * 16, acc[r][nt]);
}

void gemm_bcast(const float* a, const float* b, float* c, int rows, int kk, int tc) {
  // 8x48 main tiles (24 live accumulators) beat 4x64 here: more FMAs per
  // b-panel load with the panel still streaming from L2.
  int r0 = 0;
  for (; r0 + 8 <= rows; r0 += 8) {
    const float* ar = a + static_cast<long>(r0) * kk;
    float* cr = c + static_cast<long>(r0) * tc;
    int tq = 0;
    for (; tq + 48 <= tc; tq += 48)
      gemm_bcast_tile<8, 3>(ar, kk, b + tq, tc, cr + tq, tc, kk);
    for (; tq < tc; tq += 16)
      gemm_bcast_tile<8, 1>(ar, kk, b + tq, tc, cr + tq, tc, kk);
  }
  for (; r0 < rows; r0 += 4) {
    const float* ar = a + static_cast<long>(r0) * kk;
    float* cr = c + static_cast<long>(r0) * tc;
    int tq = 0;
    for (; tq + 48 <= tc; tq += 48)
      gemm_bcast_tile<4, 3>(ar, kk, b + tq, tc, cr + tq, tc, kk);
    for (; tq < tc; tq += 16)
      gemm_bcast_tile<4, 1>(ar, kk, b + tq, tc, cr + tq, tc, kk);
  }
}

// Horizontal-sum tree for a 4x4 block of accumulators. quad_hsum turns four
// vectors into one whose 128-bit block b holds the four quartet-b partial
// sums; block_gather_sum then folds the four blocks of each quad so lane
// (4j + l) of the result is the full horizontal sum of accumulator l of
// quad j. 30 shuffle/add ops replace 16 serial _mm512_reduce_add_ps.
inline __m512 quad_hsum(__m512 a0, __m512 a1, __m512 a2, __m512 a3) {
  const __m512 s01 =
      _mm512_add_ps(_mm512_unpacklo_ps(a0, a1), _mm512_unpackhi_ps(a0, a1));
  const __m512 s23 =
      _mm512_add_ps(_mm512_unpacklo_ps(a2, a3), _mm512_unpackhi_ps(a2, a3));
  return _mm512_add_ps(_mm512_shuffle_ps(s01, s23, _MM_SHUFFLE(1, 0, 1, 0)),
                       _mm512_shuffle_ps(s01, s23, _MM_SHUFFLE(3, 2, 3, 2)));
}

inline __m512 block_gather_sum(__m512 q0, __m512 q1, __m512 q2, __m512 q3) {
  const __m512 sa = _mm512_add_ps(_mm512_shuffle_f32x4(q0, q1, 0x44),
                                  _mm512_shuffle_f32x4(q0, q1, 0xEE));
  const __m512 sb = _mm512_add_ps(_mm512_shuffle_f32x4(q2, q3, 0x44),
                                  _mm512_shuffle_f32x4(q2, q3, 0xEE));
  return _mm512_add_ps(_mm512_shuffle_f32x4(sa, sb, 0x88),
                       _mm512_shuffle_f32x4(sa, sb, 0xDD));
}

// C[r][c] += dot(A[r][:], B[c][:]) over the chunk's tiles: the
// weight-gradient GEMM dU = dM V^T. Named accumulators, reduced once per
// chunk, exactly like the direct weight-gradient kernel.
void gemm_reduce(const float* a, const float* b, float* c, int rows, int cols,
                 int tc) {
  for (int r0 = 0; r0 < rows; r0 += 4)
    for (int c0 = 0; c0 < cols; c0 += 4) {
      const float* ap = a + static_cast<long>(r0) * tc;
      const float* bp = b + static_cast<long>(c0) * tc;
      // First strip peeled: the products seed the accumulators directly.
      __m512 a00, a01, a02, a03, a10, a11, a12, a13;
      __m512 a20, a21, a22, a23, a30, a31, a32, a33;
      {
        const __m512 r0v = _mm512_loadu_ps(ap);
        const __m512 r1v = _mm512_loadu_ps(ap + tc);
        const __m512 r2v = _mm512_loadu_ps(ap + 2L * tc);
        const __m512 r3v = _mm512_loadu_ps(ap + 3L * tc);
        const __m512 c0v = _mm512_loadu_ps(bp);
        const __m512 c1v = _mm512_loadu_ps(bp + tc);
        const __m512 c2v = _mm512_loadu_ps(bp + 2L * tc);
        const __m512 c3v = _mm512_loadu_ps(bp + 3L * tc);
        a00 = _mm512_mul_ps(r0v, c0v);
        a01 = _mm512_mul_ps(r0v, c1v);
        a02 = _mm512_mul_ps(r0v, c2v);
        a03 = _mm512_mul_ps(r0v, c3v);
        a10 = _mm512_mul_ps(r1v, c0v);
        a11 = _mm512_mul_ps(r1v, c1v);
        a12 = _mm512_mul_ps(r1v, c2v);
        a13 = _mm512_mul_ps(r1v, c3v);
        a20 = _mm512_mul_ps(r2v, c0v);
        a21 = _mm512_mul_ps(r2v, c1v);
        a22 = _mm512_mul_ps(r2v, c2v);
        a23 = _mm512_mul_ps(r2v, c3v);
        a30 = _mm512_mul_ps(r3v, c0v);
        a31 = _mm512_mul_ps(r3v, c1v);
        a32 = _mm512_mul_ps(r3v, c2v);
        a33 = _mm512_mul_ps(r3v, c3v);
      }
      for (int tq = 16; tq < tc; tq += 16) {
        const __m512 r0v = _mm512_loadu_ps(ap + tq);
        const __m512 r1v = _mm512_loadu_ps(ap + tc + tq);
        const __m512 r2v = _mm512_loadu_ps(ap + 2L * tc + tq);
        const __m512 r3v = _mm512_loadu_ps(ap + 3L * tc + tq);
        const __m512 c0v = _mm512_loadu_ps(bp + tq);
        const __m512 c1v = _mm512_loadu_ps(bp + tc + tq);
        const __m512 c2v = _mm512_loadu_ps(bp + 2L * tc + tq);
        const __m512 c3v = _mm512_loadu_ps(bp + 3L * tc + tq);
        a00 = _mm512_fmadd_ps(r0v, c0v, a00);
        a01 = _mm512_fmadd_ps(r0v, c1v, a01);
        a02 = _mm512_fmadd_ps(r0v, c2v, a02);
        a03 = _mm512_fmadd_ps(r0v, c3v, a03);
        a10 = _mm512_fmadd_ps(r1v, c0v, a10);
        a11 = _mm512_fmadd_ps(r1v, c1v, a11);
        a12 = _mm512_fmadd_ps(r1v, c2v, a12);
        a13 = _mm512_fmadd_ps(r1v, c3v, a13);
        a20 = _mm512_fmadd_ps(r2v, c0v, a20);
        a21 = _mm512_fmadd_ps(r2v, c1v, a21);
        a22 = _mm512_fmadd_ps(r2v, c2v, a22);
        a23 = _mm512_fmadd_ps(r2v, c3v, a23);
        a30 = _mm512_fmadd_ps(r3v, c0v, a30);
        a31 = _mm512_fmadd_ps(r3v, c1v, a31);
        a32 = _mm512_fmadd_ps(r3v, c2v, a32);
        a33 = _mm512_fmadd_ps(r3v, c3v, a33);
      }
      const __m512 sums = block_gather_sum(quad_hsum(a00, a01, a02, a03),
                                           quad_hsum(a10, a11, a12, a13),
                                           quad_hsum(a20, a21, a22, a23),
                                           quad_hsum(a30, a31, a32, a33));
      float* cr = c + static_cast<long>(r0) * cols + c0;
      const __m128 s0 = _mm512_extractf32x4_ps(sums, 0);
      const __m128 s1 = _mm512_extractf32x4_ps(sums, 1);
      const __m128 s2 = _mm512_extractf32x4_ps(sums, 2);
      const __m128 s3 = _mm512_extractf32x4_ps(sums, 3);
      _mm_storeu_ps(cr, _mm_add_ps(_mm_loadu_ps(cr), s0));
      cr += cols;
      _mm_storeu_ps(cr, _mm_add_ps(_mm_loadu_ps(cr), s1));
      cr += cols;
      _mm_storeu_ps(cr, _mm_add_ps(_mm_loadu_ps(cr), s2));
      cr += cols;
      _mm_storeu_ps(cr, _mm_add_ps(_mm_loadu_ps(cr), s3));
    }
}

// U = G w G^T per filter, laid out [k][oc][c] (and transposed [k][c][oc]
// when `ut` is wanted for the input-gradient GEMM).
void build_u(const float* w, int OC, int C, float* u, float* ut, long ks) {
  for (int oc = 0; oc < OC; ++oc)
    for (int c = 0; c < C; ++c) {
      const float* k9 = w + (static_cast<long>(oc) * C + c) * 9;
      float g4[4][3];
      for (int j = 0; j < 3; ++j) {
        const float w0 = k9[j], w1 = k9[3 + j], w2 = k9[6 + j];
        g4[0][j] = w0;
        g4[1][j] = 0.5f * (w0 + w1 + w2);
        g4[2][j] = 0.5f * (w0 - w1 + w2);
        g4[3][j] = w2;
      }
      for (int r = 0; r < 4; ++r) {
        const float a0 = g4[r][0], a1 = g4[r][1], a2 = g4[r][2];
        const float uu[4] = {a0, 0.5f * (a0 + a1 + a2), 0.5f * (a0 - a1 + a2), a2};
        for (int j = 0; j < 4; ++j) {
          const long k = r * 4 + j;
          u[k * ks + static_cast<long>(oc) * C + c] = uu[j];
          if (ut) ut[k * ks + static_cast<long>(c) * OC + oc] = uu[j];
        }
      }
    }
}

// dw = G^T (sum dU) G per filter: the exact adjoint of build_u.
void finalize_dw(const float* du, int OC, int C, float* gw, long ks) {
  for (int oc = 0; oc < OC; ++oc)
    for (int c = 0; c < C; ++c) {
      const float* p = du + static_cast<long>(oc) * C + c;
      float m4[4][4];
      for (int k = 0; k < 16; ++k) m4[k >> 2][k & 3] = p[k * ks];
      float t4[4][3];
      for (int r = 0; r < 4; ++r) {
        t4[r][0] = m4[r][0] + 0.5f * (m4[r][1] + m4[r][2]);
        t4[r][1] = 0.5f * (m4[r][1] - m4[r][2]);
        t4[r][2] = 0.5f * (m4[r][1] + m4[r][2]) + m4[r][3];
      }
      float* o = gw + (static_cast<long>(oc) * C + c) * 9;
      for (int j = 0; j < 3; ++j) {
        o[j] = t4[0][j] + 0.5f * (t4[1][j] + t4[2][j]);
        o[3 + j] = 0.5f * (t4[1][j] - t4[2][j]);
        o[6 + j] = 0.5f * (t4[1][j] + t4[2][j]) + t4[3][j];
      }
    }
}

// Enumerates the chunk groups of one sample and calls `flush(ng)` with the
// group array filled whenever it reaches kMaxGroups (and once at the end).
template <typename F>
void for_each_chunk(int d, int Hp, int Wp, Group* gs, F&& flush) {
  int ng = 0;
  for (int a = 0; a < d && a < Hp; ++a) {
    const int hso = (Hp - a + d - 1) / d;  // output rows on this sublattice
    const int th = (hso + 1) / 2;          // Winograd tile rows
    for (int tr = 0; tr < th; ++tr)
      for (int x0 = 0; x0 < Wp; x0 += 32) {
        gs[ng++] = {a, tr, x0};
        if (ng == kMaxGroups) {
          flush(ng);
          ng = 0;
        }
      }
  }
  if (ng) flush(ng);
}

}  // namespace

bool WinogradConv::available() { return kern::avx512_available(); }

bool WinogradConv::eligible(int C, int OC, int k, int dilation) {
  const bool pow2 = dilation == 1 || dilation == 2 || dilation == 4 ||
                    dilation == 8 || dilation == 16;
  return k == 3 && pow2 && C >= 4 && OC >= 4 && C % 4 == 0 && OC % 4 == 0;
}

void WinogradConv::forward(const float* in, int N, int C, int H, int W,
                           const float* w, const float* bias, int OC,
                           int dilation, bool relu, float* out) {
  const int d = dilation;
  const int Hp = H - 2 * d, Wp = W - 2 * d;
  const int tc_max = 16 * kMaxGroups;
  // One cache line of padding per coefficient plane: the unpadded strides are
  // multiples of 4 KiB, which would alias all 16 planes onto one L1 set and
  // stall the transforms on store/load thrash.
  const long kus = static_cast<long>(OC) * C + 16;
  const long kvs = static_cast<long>(C) * tc_max + 16;
  const long kms = static_cast<long>(OC) * tc_max + 16;
  u_.resize(static_cast<size_t>(16) * kus);
  v_.resize(static_cast<size_t>(16) * kvs);
  m_.resize(static_cast<size_t>(16) * kms);
  build_u(w, OC, C, u_.data(), nullptr, kus);
  const Tables t = make_tables(d);
  Group gs[kMaxGroups];
  for (int n = 0; n < N; ++n) {
    const float* inb = in + static_cast<size_t>(n) * C * H * W;
    float* outb = out + static_cast<size_t>(n) * OC * Hp * Wp;
    for_each_chunk(d, Hp, Wp, gs, [&](int ng) {
      const int tc = 16 * ng;
      in_transform_chunk(inb, C, H, W, d, t, gs, ng, tc, v_.data(), kvs);
      for (int k = 0; k < 16; ++k)
        gemm_bcast(u_.data() + k * kus, v_.data() + k * kvs,
                   m_.data() + k * kms, OC, C, tc);
      out_transform_chunk(m_.data(), OC, tc, t, gs, ng, d, Hp, Wp, bias, relu,
                          outb, kms);
    });
  }
}

void WinogradConv::backward(const float* in, int N, int C, int H, int W,
                            const float* w, const float* gout, const float* act,
                            int OC, int dilation, float* gw, float* gb,
                            float* gin) {
  const int d = dilation;
  const int Hp = H - 2 * d, Wp = W - 2 * d;
  const int tc_max = 16 * kMaxGroups;
  const long kus = static_cast<long>(OC) * C + 16;
  const long kvs = static_cast<long>(C) * tc_max + 16;
  const long kms = static_cast<long>(OC) * tc_max + 16;
  u_.resize(static_cast<size_t>(16) * kus);
  ut_.resize(static_cast<size_t>(16) * kus);
  v_.resize(static_cast<size_t>(16) * kvs);
  dm_.resize(static_cast<size_t>(16) * kms);
  du_.assign(static_cast<size_t>(16) * kus, 0.0f);
  build_u(w, OC, C, u_.data(), gin ? ut_.data() : nullptr, kus);
  std::memset(gb, 0, sizeof(float) * OC);
  // gin needs no zeroing: din_scatter_chunk plain-stores each cell's first
  // contribution (see the overlap masks there) and accumulates the rest.
  // The one exception is planes shorter than the dilation: input rows whose
  // residue has no output rows receive no scatter at all, so zero them.
  if (gin && Hp < d)
    for (long nc = 0; nc < static_cast<long>(N) * C; ++nc)
      for (int a = Hp; a < d; ++a)
        for (int ir = a; ir < H; ir += d)
          std::memset(gin + (nc * H + ir) * static_cast<long>(W), 0,
                      sizeof(float) * W);
  const Tables t = make_tables(d);
  Group gs[kMaxGroups];
  for (int n = 0; n < N; ++n) {
    const float* inb = in + static_cast<size_t>(n) * C * H * W;
    const size_t ooff = static_cast<size_t>(n) * OC * Hp * Wp;
    const float* goutb = gout + ooff;
    const float* actb = act ? act + ooff : nullptr;
    float* ginb = gin ? gin + static_cast<size_t>(n) * C * H * W : nullptr;
    for_each_chunk(d, Hp, Wp, gs, [&](int ng) {
      const int tc = 16 * ng;
      in_transform_chunk(inb, C, H, W, d, t, gs, ng, tc, v_.data(), kvs);
      dy_expand_chunk(goutb, actb, OC, tc, t, gs, ng, d, Hp, Wp, dm_.data(), gb,
                      kms);
      for (int k = 0; k < 16; ++k)
        gemm_reduce(dm_.data() + k * kms, v_.data() + k * kvs,
                    du_.data() + k * kus, OC, C, tc);
      if (!ginb) return;
      // dV = U^T dM overwrites the V panel (its dU use is done), then the
      // inverse input transform scatters it into the gradient planes.
      for (int k = 0; k < 16; ++k)
        gemm_bcast(ut_.data() + k * kus, dm_.data() + k * kms,
                   v_.data() + k * kvs, C, OC, tc);
      din_scatter_chunk(v_.data(), C, tc, t, gs, ng, d, H, W, ginb, kvs);
    });
  }
  finalize_dw(du_.data(), OC, C, gw, kus);
}

}  // namespace aseg
