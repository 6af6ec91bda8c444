#pragma once
#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "aseg/rng.hpp"
#include "aseg/tensor.hpp"
#include "aseg/volume.hpp"

namespace aseg {

enum class Plane : int { axial = 0, coronal = 1, sagittal = 2 };

inline const char* plane_name(Plane p) {
  switch (p) {
    case Plane::axial: return "axial";
    case Plane::coronal: return "coronal";
    default: return "sagittal";
  }
}

/// One training volume: normalized intensities (resampled to 1 mm upstream)
/// plus its reference labels on the same grid.
struct TrainingCase {
  Volume image;
  LabelVolume labels;
};

struct TrainConfig {
  int iterations = 10000;
  int batch_size = 16;
  int subimage_size = 281;
  double learning_rate = 0.001;
  std::uint64_t seed = 1;
  int validation_interval = 500;
  int class_count = 4;
};

/// One sampled sub-image: the network input patch, the label grid for the
/// central output region, and where it came from (kept for reproducibility
/// and tests; corners may be negative when a slice is smaller than the
/// sub-image, in which case the out-of-slice part is pad).
struct SamplePair {
  Tensor<float> image;          // (1, S, S)
  Tensor<std::uint8_t> labels;  // (S - rf + 1)^2 central region
  Plane plane = Plane::axial;
  int volume_index = 0;
  int slice_index = 0;
  std::array<int, 2> corner{0, 0};  // (row, col) of the sub-image origin
};

namespace detail {

/// Rows/cols of a plane's slices: axial = (y, x) at fixed z,
/// coronal = (z, x) at fixed y, sagittal = (z, y) at fixed x.
inline std::array<int, 3> plane_axes(Plane p) {
  switch (p) {
    case Plane::axial: return {0, 1, 2};    // slice axis z, rows y, cols x
    case Plane::coronal: return {1, 0, 2};  // slice axis y, rows z, cols x
    default: return {2, 0, 1};              // slice axis x, rows z, cols y
  }
}

}  // namespace detail

/// Draw one minibatch: per sample choose volume, plane, slice and top-left
/// corner uniformly at random (in that rng order). The corner ranges over
/// [min(0, dim-S), max(0, dim-S)] per axis — exactly one choice when the
/// slice matches the sub-image — so slices smaller than the sub-image appear
/// at every alignment and are completed with the pad value 0 and background
/// labels, matching what inference-time slice padding looks like. The label
/// patch is the central (S - rf + 1)^2 region of the sub-image.
inline std::vector<SamplePair> sample_minibatch(const std::vector<TrainingCase>& dataset,
                                                const TrainConfig& config, int receptive_field,
                                                Rng& rng) {
  if (dataset.empty()) throw std::invalid_argument("sample_minibatch: empty dataset");
  const int S = config.subimage_size;
  const int P = S - (receptive_field - 1);
  const int margin = (receptive_field - 1) / 2;
  if (P < 1) {
    throw std::invalid_argument("sample_minibatch: sub-image size " + std::to_string(S) +
                                " leaves no output for receptive field " +
                                std::to_string(receptive_field));
  }
  for (const TrainingCase& tc : dataset) {
    if (tc.image.unit != Volume::Unit::normalized) {
      throw std::invalid_argument("sample_minibatch: volumes must be normalized");
    }
    if (tc.image.dims != tc.labels.dims) {
      throw std::invalid_argument("sample_minibatch: image/label dims differ");
    }
  }

  std::vector<SamplePair> batch(static_cast<std::size_t>(config.batch_size));
  for (SamplePair& s : batch) {
    s.volume_index = static_cast<int>(rng.uniform_int(0, static_cast<int>(dataset.size()) - 1));
    const TrainingCase& tc = dataset[static_cast<std::size_t>(s.volume_index)];
    s.plane = static_cast<Plane>(rng.uniform_int(0, 2));
    const auto axes = detail::plane_axes(s.plane);
    const int nslice = tc.image.dims[axes[0]];
    const int rows = tc.image.dims[axes[1]];
    const int cols = tc.image.dims[axes[2]];
    s.slice_index = static_cast<int>(rng.uniform_int(0, nslice - 1));
    s.corner[0] = static_cast<int>(rng.uniform_int(std::min(0, rows - S), std::max(0, rows - S)));
    s.corner[1] = static_cast<int>(rng.uniform_int(std::min(0, cols - S), std::max(0, cols - S)));

    // Volume strides along (slice, row, col) axes, in z-major flat order.
    const std::array<std::size_t, 3> stride{
        static_cast<std::size_t>(tc.image.dims[1]) * tc.image.dims[2],
        static_cast<std::size_t>(tc.image.dims[2]), 1};
    const std::size_t base = static_cast<std::size_t>(s.slice_index) * stride[axes[0]];
    const std::size_t row_stride = stride[axes[1]], col_stride = stride[axes[2]];

    s.image.resize({1, S, S});
    for (int i = 0; i < S; ++i) {
      const int r = s.corner[0] + i;
      float* dst = s.image.ptr() + static_cast<std::size_t>(i) * S;
      if (r < 0 || r >= rows) {
        for (int j = 0; j < S; ++j) dst[j] = 0.0f;
        continue;
      }
      const float* src = tc.image.data.data() + base + static_cast<std::size_t>(r) * row_stride;
      for (int j = 0; j < S; ++j) {
        const int c = s.corner[1] + j;
        dst[j] = (c < 0 || c >= cols) ? 0.0f : src[static_cast<std::size_t>(c) * col_stride];
      }
    }

    s.labels.resize({P, P});
    for (int i = 0; i < P; ++i) {
      const int r = s.corner[0] + margin + i;
      std::uint8_t* dst = s.labels.ptr() + static_cast<std::size_t>(i) * P;
      if (r < 0 || r >= rows) {
        for (int j = 0; j < P; ++j) dst[j] = 0;
        continue;
      }
      const std::uint8_t* src =
          tc.labels.data.data() + base + static_cast<std::size_t>(r) * row_stride;
      for (int j = 0; j < P; ++j) {
        const int c = s.corner[1] + margin + j;
        dst[j] = (c < 0 || c >= cols) ? 0 : src[static_cast<std::size_t>(c) * col_stride];
      }
    }
  }
  return batch;
}

}  // namespace aseg
