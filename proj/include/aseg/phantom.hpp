#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "aseg/error.hpp"
#include "aseg/rng.hpp"
#include "aseg/volume.hpp"

namespace aseg {

/// Synthetic "candy-cane" aorta: two vertical cylinders (ascending and
/// descending aorta) joined by a half-torus arch, inside a noisy background
/// with ellipsoidal organ-like distractor blobs. All geometry is specified
/// in physical mm, so the same spec rasterizes consistently at any voxel
/// spacing. Defaults give 40 HU aorta over 0 HU background under 20 HU
/// noise: too noisy for per-voxel thresholding, segmentable from context.
struct PhantomSpec {
  std::array<int, 3> dims{128, 96, 96};             // (nz, ny, nx)
  std::array<double, 3> spacing{1.0, 1.0, 1.0};     // (sz, sy, sx) mm
  double tube_radius_mm = 8.0;
  std::array<double, 2> ascending_axis{32.0, 48.0};   // (x, y) mm
  std::array<double, 2> descending_axis{64.0, 48.0};  // (x, y) mm
  std::array<double, 3> arch_center{48.0, 48.0, 84.0};  // (x, y, z) mm
  double arch_radius_mm = 16.0;
  float background_hu = 0.0f;
  float aorta_hu = 40.0f;
  std::array<float, 2> organ_hu_range{20.0f, 100.0f};
  double noise_sigma_hu = 20.0;
  int blob_count = 6;
  std::uint64_t seed = 0;
};

struct Phantom {
  PhantomSpec spec;  // the exact (possibly jittered) spec that was rasterized
  Volume image;      // Hounsfield units, integer-valued floats
  LabelVolume labels;  // 0 background, 1 ascending, 2 arch, 3 descending
};

/// Same physical geometry as the default spec on an anisotropic grid
/// (2.5 mm slices, 0.7 mm in-plane), for exercising the resampling path.
inline PhantomSpec anisotropic_phantom_spec() {
  PhantomSpec spec;
  spec.spacing = {2.5, 0.7, 0.7};
  spec.dims = {51, 137, 137};  // ~physical extent of the 1 mm default
  return spec;
}

namespace detail {

/// Voxel centers must stay >= 2 voxels away from every face, so the lowest
/// admissible physical coordinate on an axis is 2*spacing and the highest
/// is (n-3)*spacing.
struct AxisBounds {
  double lo, hi;
};

inline AxisBounds phantom_bounds(const PhantomSpec& s, int axis) {
  return {2.0 * s.spacing[axis], (s.dims[axis] - 3) * s.spacing[axis]};
}

/// Cylinders run from two voxels above the volume floor up to the arch plane.
inline double cylinder_bottom_z(const PhantomSpec& s) { return 2.0 * s.spacing[0]; }

inline std::string check_phantom_spec(const PhantomSpec& s) {
  const double r = s.tube_radius_mm;
  const double dx = s.descending_axis[0] - s.ascending_axis[0];
  const double dy = s.descending_axis[1] - s.ascending_axis[1];
  const double separation = std::hypot(dx, dy);
  if (!(separation > 2.0 * (r + 2.0))) {
    return "cylinder axes separated by " + std::to_string(separation) +
           " mm, need > " + std::to_string(2.0 * (r + 2.0));
  }
  const AxisBounds bz = phantom_bounds(s, 0), by = phantom_bounds(s, 1),
                   bx = phantom_bounds(s, 2);
  for (const auto& axis : {s.ascending_axis, s.descending_axis}) {
    if (axis[0] - r < bx.lo || axis[0] + r > bx.hi || axis[1] - r < by.lo ||
        axis[1] + r > by.hi) {
      return "cylinder at (" + std::to_string(axis[0]) + ", " + std::to_string(axis[1]) +
             ") leaves the 2-voxel margin";
    }
  }
  // Horizontal direction between the axes; the arch circle lies in the
  // vertical plane spanned by this direction and z.
  const double ux = dx / separation, uy = dy / separation;
  const double R = s.arch_radius_mm;
  const double ex = R * std::abs(ux) + r, ey = R * std::abs(uy) + r;
  const auto& c = s.arch_center;
  if (c[0] - ex < bx.lo || c[0] + ex > bx.hi || c[1] - ey < by.lo || c[1] + ey > by.hi ||
      c[2] + R + r > bz.hi) {
    return "arch torus leaves the 2-voxel margin";
  }
  if (c[2] - cylinder_bottom_z(s) < 2.0 * s.spacing[0]) {
    return "arch plane too low: cylinders would be under two voxels tall";
  }
  return {};
}

}  // namespace detail

/// Rasterize one phantom. Labels are pure geometry (no rng); the rng drives
/// blob placement and noise only, in that order, so identical geometry
/// fields give identical labels regardless of seed, blob count, or sigma.
inline Phantom generate_phantom(const PhantomSpec& spec) {
  if (std::string why = detail::check_phantom_spec(spec); !why.empty()) {
    throw InvalidSpecError("phantom spec invalid: " + why);
  }
  const int nz = spec.dims[0], ny = spec.dims[1], nx = spec.dims[2];
  const double sz = spec.spacing[0], sy = spec.spacing[1], sx = spec.spacing[2];
  const double r2 = spec.tube_radius_mm * spec.tube_radius_mm;
  const double zlow = detail::cylinder_bottom_z(spec);
  const double zarch = spec.arch_center[2];
  const double dxa = spec.descending_axis[0] - spec.ascending_axis[0];
  const double dya = spec.descending_axis[1] - spec.ascending_axis[1];
  const double sep = std::hypot(dxa, dya);
  const double ux = dxa / sep, uy = dya / sep;
  const double R = spec.arch_radius_mm;

  Phantom p;
  p.spec = spec;
  p.labels.dims = spec.dims;
  p.labels.spacing = spec.spacing;
  p.labels.data.assign(voxel_count(spec.dims), 0);
  p.image.dims = spec.dims;
  p.image.spacing = spec.spacing;
  p.image.unit = Volume::Unit::hounsfield;
  p.image.data.assign(voxel_count(spec.dims), spec.background_hu);

  auto inside_cylinder = [&](const std::array<double, 2>& axis, double x, double y,
                             double z) {
    const double qx = x - axis[0], qy = y - axis[1];
    return qx * qx + qy * qy <= r2 && z >= zlow && z < zarch;
  };
  auto inside_arch = [&](double x, double y, double z) {
    if (z < zarch) return false;  // the arch owns voxels at/above its plane
    const double vx = x - spec.arch_center[0], vy = y - spec.arch_center[1];
    const double vz = z - zarch;
    const double pu = vx * ux + vy * uy;    // along the axis-to-axis direction
    const double pn = vx * uy - vy * ux;    // horizontal offset from the arch plane
    const double rho = std::hypot(pu, vz);  // in-plane distance from the circle center
    const double dr = rho - R;
    return dr * dr + pn * pn <= r2;
  };

  for (int zi = 0; zi < nz; ++zi) {
    const double z = zi * sz;
    for (int yi = 0; yi < ny; ++yi) {
      const double y = yi * sy;
      std::uint8_t* row = &p.labels.at(zi, yi, 0);
      for (int xi = 0; xi < nx; ++xi) {
        const double x = xi * sx;
        if (inside_arch(x, y, z)) {
          row[xi] = 2;
        } else if (inside_cylinder(spec.ascending_axis, x, y, z)) {
          row[xi] = 1;
        } else if (inside_cylinder(spec.descending_axis, x, y, z)) {
          row[xi] = 3;
        }
      }
    }
  }

  Rng rng(spec.seed);

  // Distractor blobs: ellipsoids painted into the intensity volume only,
  // redrawn when they would touch the aorta.
  const detail::AxisBounds bz = detail::phantom_bounds(spec, 0),
                           by = detail::phantom_bounds(spec, 1),
                           bx = detail::phantom_bounds(spec, 2);
  for (int b = 0; b < spec.blob_count; ++b) {
    bool placed = false;
    for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
      const double az = rng.uniform(4.0, 12.0);
      const double ay = rng.uniform(4.0, 12.0);
      const double ax = rng.uniform(4.0, 12.0);
      const double cz = rng.uniform(bz.lo + az, bz.hi - az);
      const double cy = rng.uniform(by.lo + ay, by.hi - ay);
      const double cx = rng.uniform(bx.lo + ax, bx.hi - ax);
      const float hu = static_cast<float>(
          std::nearbyint(rng.uniform(spec.organ_hu_range[0], spec.organ_hu_range[1])));
      const int z0 = std::max(0, static_cast<int>(std::ceil((cz - az) / sz)));
      const int z1 = std::min(nz - 1, static_cast<int>(std::floor((cz + az) / sz)));
      const int y0 = std::max(0, static_cast<int>(std::ceil((cy - ay) / sy)));
      const int y1 = std::min(ny - 1, static_cast<int>(std::floor((cy + ay) / sy)));
      const int x0 = std::max(0, static_cast<int>(std::ceil((cx - ax) / sx)));
      const int x1 = std::min(nx - 1, static_cast<int>(std::floor((cx + ax) / sx)));
      auto inside_blob = [&](int zi, int yi, int xi) {
        const double fz = (zi * sz - cz) / az, fy = (yi * sy - cy) / ay,
                     fx = (xi * sx - cx) / ax;
        return fz * fz + fy * fy + fx * fx <= 1.0;
      };
      bool overlaps = false;
      for (int zi = z0; zi <= z1 && !overlaps; ++zi)
        for (int yi = y0; yi <= y1 && !overlaps; ++yi)
          for (int xi = x0; xi <= x1 && !overlaps; ++xi)
            if (inside_blob(zi, yi, xi) && p.labels.at(zi, yi, xi) != 0) overlaps = true;
      if (overlaps) continue;
      for (int zi = z0; zi <= z1; ++zi)
        for (int yi = y0; yi <= y1; ++yi)
          for (int xi = x0; xi <= x1; ++xi)
            if (inside_blob(zi, yi, xi)) p.image.at(zi, yi, xi) = hu;
      placed = true;
    }
    if (!placed) {
      throw InvalidSpecError("phantom spec invalid: could not place organ blob " +
                             std::to_string(b) + " off the aorta after 100 redraws");
    }
  }

  // Aorta intensity over everything, then rounded additive Gaussian noise on
  // intensities only. Values stay integral so 16-bit persistence is lossless.
  for (std::size_t i = 0; i < p.labels.data.size(); ++i) {
    if (p.labels.data[i] != 0) p.image.data[i] = spec.aorta_hu;
  }
  if (spec.noise_sigma_hu > 0.0) {
    for (float& v : p.image.data) {
      const double noisy = v + rng.normal(0.0, spec.noise_sigma_hu);
      v = static_cast<float>(std::nearbyint(std::clamp(noisy, -32768.0, 32767.0)));
    }
  }
  return p;
}

/// Deterministic dataset of jittered phantoms. Axis positions move +-8 mm,
/// the tube radius +-2 mm, and noise sigma +-25%; the arch is re-derived
/// from the jittered axes (center at their midpoint, radius half their
/// separation) so the candy-cane stays consistent. Jitter violating the
/// geometric invariants is redrawn up to 100 times.
inline std::vector<Phantom> make_dataset(int count, const PhantomSpec& base,
                                         std::uint64_t seed) {
  if (count < 1) throw InvalidSpecError("make_dataset: count must be >= 1");
  std::vector<Phantom> out;
  out.reserve(static_cast<std::size_t>(count));
  std::uint64_t state = seed;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t jitter_seed = splitmix64(state);
    const std::uint64_t phantom_seed = splitmix64(state);
    Rng jr(jitter_seed);
    PhantomSpec spec;
    bool ok = false;
    for (int attempt = 0; attempt < 100 && !ok; ++attempt) {
      spec = base;
      spec.ascending_axis[0] += jr.uniform(-8.0, 8.0);
      spec.ascending_axis[1] += jr.uniform(-8.0, 8.0);
      spec.descending_axis[0] += jr.uniform(-8.0, 8.0);
      spec.descending_axis[1] += jr.uniform(-8.0, 8.0);
      spec.tube_radius_mm += jr.uniform(-2.0, 2.0);
      spec.noise_sigma_hu *= 1.0 + jr.uniform(-0.25, 0.25);
      spec.arch_center = {(spec.ascending_axis[0] + spec.descending_axis[0]) / 2.0,
                          (spec.ascending_axis[1] + spec.descending_axis[1]) / 2.0,
                          base.arch_center[2]};
      spec.arch_radius_mm = std::hypot(spec.descending_axis[0] - spec.ascending_axis[0],
                                       spec.descending_axis[1] - spec.ascending_axis[1]) /
                            2.0;
      spec.seed = phantom_seed;
      ok = detail::check_phantom_spec(spec).empty();
    }
    if (!ok) {
      throw InvalidSpecError("make_dataset: no valid jitter for phantom " +
                             std::to_string(i) + " after 100 redraws");
    }
    out.push_back(generate_phantom(spec));
  }
  return out;
}

}  // namespace aseg
