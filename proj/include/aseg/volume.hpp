#pragma once
#include <algorithm>
#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

namespace aseg {

/// Volumes use (z, y, x) axis order throughout: dims = (nz, ny, nx),
/// spacing = (sz, sy, sx) in mm, and flat storage is z-major with x
/// contiguous. Keeping one convention for images, labels and probability
/// maps avoids per-call axis bookkeeping in the pipeline.
inline std::size_t voxel_count(const std::array<int, 3>& dims) {
  for (int d : dims) {
    if (d < 1) throw std::invalid_argument("volume: axis length must be >= 1");
  }
  return static_cast<std::size_t>(dims[0]) * static_cast<std::size_t>(dims[1]) *
         static_cast<std::size_t>(dims[2]);
}

/// Scalar intensity volume. Voxels are stored as float regardless of unit:
/// Hounsfield units from 16-bit CT data are integers well inside float's
/// exact range, and normalized intensities are fractions in [0, 1].
struct Volume {
  enum class Unit : std::uint8_t { hounsfield, normalized };

  std::array<int, 3> dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  Unit unit = Unit::hounsfield;
  std::vector<float> data;

  float& at(int z, int y, int x) {
    return data[(static_cast<std::size_t>(z) * dims[1] + y) * dims[2] + x];
  }
  float at(int z, int y, int x) const {
    return data[(static_cast<std::size_t>(z) * dims[1] + y) * dims[2] + x];
  }
};

/// Per-voxel class ids, 0 = background.
struct LabelVolume {
  std::array<int, 3> dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<std::uint8_t> data;

  std::uint8_t& at(int z, int y, int x) {
    return data[(static_cast<std::size_t>(z) * dims[1] + y) * dims[2] + x];
  }
  std::uint8_t at(int z, int y, int x) const {
    return data[(static_cast<std::size_t>(z) * dims[1] + y) * dims[2] + x];
  }
};

/// Per-class probability grids, stored class-major: data[c][z][y][x].
/// Invariant at every pipeline stage: per-voxel class sums are 1 within 1e-5.
struct ProbabilityVolume {
  int class_count = 0;
  std::array<int, 3> dims{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::vector<float> data;

  std::size_t plane_size() const { return voxel_count(dims); }

  float& at(int c, int z, int y, int x) {
    return data[(static_cast<std::size_t>(c) * dims[0] + z) * dims[1] * dims[2] +
                static_cast<std::size_t>(y) * dims[2] + x];
  }
  float at(int c, int z, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * dims[0] + z) * dims[1] * dims[2] +
                static_cast<std::size_t>(y) * dims[2] + x];
  }
  float* class_ptr(int c) { return data.data() + static_cast<std::size_t>(c) * plane_size(); }
  const float* class_ptr(int c) const {
    return data.data() + static_cast<std::size_t>(c) * plane_size();
  }
};

inline constexpr float kHuMin = -1024.0f;
inline constexpr float kHuMax = 3071.0f;

/// Clamp to [-1024, 3071] HU and map linearly onto [0, 1]. Air clamps to 0,
/// which is also the pad value used by slice inference and sub-image
/// sampling, so out-of-volume context looks like air everywhere.
inline Volume normalize_intensities(const Volume& v) {
  if (v.unit != Volume::Unit::hounsfield) {
    throw std::invalid_argument("normalize_intensities: volume is not in Hounsfield units");
  }
  Volume out;
  out.dims = v.dims;
  out.spacing = v.spacing;
  out.unit = Volume::Unit::normalized;
  out.data.resize(v.data.size());
  const float range = kHuMax - kHuMin;  // 4095
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    const float h = std::min(kHuMax, std::max(kHuMin, v.data[i]));
    out.data[i] = (h - kHuMin) / range;
  }
  return out;
}

}  // namespace aseg
