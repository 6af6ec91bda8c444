#include <doctest.h>

#include <aseg/rng.hpp>
#include <aseg/sampling.hpp>

#include <array>
#include <cmath>

using aseg::Plane;
using aseg::SamplePair;
using aseg::TrainConfig;
using aseg::TrainingCase;

TEST_SUITE_BEGIN("sampling");

namespace {

/// Volume whose voxel values encode their own coordinates, so any extracted
/// pixel can be traced back to (z, y, x) exactly.
TrainingCase coded_case(std::array<int, 3> dims) {
  TrainingCase tc;
  tc.image.dims = dims;
  tc.image.unit = aseg::Volume::Unit::normalized;
  tc.image.data.resize(aseg::voxel_count(dims));
  tc.labels.dims = dims;
  tc.labels.data.resize(tc.image.data.size());
  for (int z = 0; z < dims[0]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[2]; ++x) {
        tc.image.at(z, y, x) = 0.001f + z * 0.001f + y * 0.00001f + x * 0.0000001f;
        tc.labels.at(z, y, x) = static_cast<std::uint8_t>(1 + (z + y + x) % 3);
      }
  return tc;
}

/// Map a sample-plane pixel (row, col) of slice k back to volume (z, y, x).
std::array<int, 3> to_volume(Plane plane, int k, int row, int col) {
  switch (plane) {
    case Plane::axial: return {k, row, col};       // (y, x) at fixed z
    case Plane::coronal: return {row, k, col};     // (z, x) at fixed y
    default: return {row, col, k};                 // sagittal: (z, y) at fixed x
  }
}

std::array<int, 2> slice_dims(Plane plane, const std::array<int, 3>& dims) {
  switch (plane) {
    case Plane::axial: return {dims[1], dims[2]};
    case Plane::coronal: return {dims[0], dims[2]};
    default: return {dims[0], dims[1]};
  }
}

/// Check every pixel of a sample against the source volume, including pad
/// completion outside the slice and the centered label patch.
void check_sample(const SamplePair& s, const TrainingCase& tc, int S, int rf) {
  const int margin = (rf - 1) / 2;
  const int P = S - (rf - 1);
  REQUIRE(s.image.shape == std::vector<int>{1, S, S});
  REQUIRE(s.labels.shape == std::vector<int>{P, P});
  const auto sd = slice_dims(s.plane, tc.image.dims);
  for (int i = 0; i < S; ++i) {
    for (int j = 0; j < S; ++j) {
      const int r = s.corner[0] + i, c = s.corner[1] + j;
      float expect = 0.0f;
      if (r >= 0 && r < sd[0] && c >= 0 && c < sd[1]) {
        const auto v = to_volume(s.plane, s.slice_index, r, c);
        expect = tc.image.at(v[0], v[1], v[2]);
      }
      REQUIRE(s.image.data[static_cast<size_t>(i) * S + j] == expect);
    }
  }
  for (int i = 0; i < P; ++i) {
    for (int j = 0; j < P; ++j) {
      const int r = s.corner[0] + margin + i, c = s.corner[1] + margin + j;
      std::uint8_t expect = 0;
      if (r >= 0 && r < sd[0] && c >= 0 && c < sd[1]) {
        const auto v = to_volume(s.plane, s.slice_index, r, c);
        expect = tc.labels.at(v[0], v[1], v[2]);
      }
      REQUIRE(s.labels.data[static_cast<size_t>(i) * P + j] == expect);
    }
  }
}

}  // namespace

TEST_CASE("every sampled pixel traces back to the volume or the pad") {
  // Mixed geometry: one axis smaller than the sub-image, others larger.
  const std::vector<TrainingCase> ds = {coded_case({12, 7, 16}), coded_case({9, 9, 9})};
  TrainConfig cfg;
  cfg.subimage_size = 9;
  cfg.batch_size = 64;
  aseg::Rng rng(123);
  const int rf = 5;
  auto batch = aseg::sample_minibatch(ds, cfg, rf, rng);
  REQUIRE(batch.size() == 64);
  for (const auto& s : batch) check_sample(s, ds[s.volume_index], 9, rf);
}

TEST_CASE("a slice exactly the sub-image size admits only the zero corner") {
  const std::vector<TrainingCase> ds = {coded_case({9, 9, 9})};
  TrainConfig cfg;
  cfg.subimage_size = 9;
  cfg.batch_size = 32;
  aseg::Rng rng(5);
  for (const auto& s : aseg::sample_minibatch(ds, cfg, 5, rng)) {
    CHECK(s.corner == std::array<int, 2>{0, 0});  // dims == S on every plane
    // The sample is the whole slice.
    const auto v0 = to_volume(s.plane, s.slice_index, 0, 0);
    CHECK(s.image.data[0] == ds[0].image.at(v0[0], v0[1], v0[2]));
  }
}

TEST_CASE("a small slice is pad-completed with zeros and background labels") {
  const std::vector<TrainingCase> ds = {coded_case({3, 3, 3})};  // all labels nonzero
  TrainConfig cfg;
  cfg.subimage_size = 9;
  cfg.batch_size = 16;
  aseg::Rng rng(7);
  auto batch = aseg::sample_minibatch(ds, cfg, 5, rng);
  bool saw_pad_pixel = false, saw_bg_label = false, saw_fg_label = false;
  for (const auto& s : batch) {
    check_sample(s, ds[0], 9, 5);
    for (float v : s.image.data) saw_pad_pixel = saw_pad_pixel || v == 0.0f;
    for (auto l : s.labels.data) {
      saw_bg_label = saw_bg_label || l == 0;
      saw_fg_label = saw_fg_label || l != 0;
    }
  }
  CHECK(saw_pad_pixel);
  CHECK(saw_bg_label);  // only possible via padding: volume labels are all 1..3
  CHECK(saw_fg_label);
}

TEST_CASE("planes are drawn uniformly and volumes are all visited") {
  const std::vector<TrainingCase> ds = {coded_case({5, 5, 5}), coded_case({6, 6, 6}),
                                        coded_case({7, 7, 7})};
  TrainConfig cfg;
  cfg.subimage_size = 9;
  cfg.batch_size = 10000;
  aseg::Rng rng(2024);
  auto batch = aseg::sample_minibatch(ds, cfg, 5, rng);
  std::array<int, 3> plane_counts{0, 0, 0};
  std::array<int, 3> volume_counts{0, 0, 0};
  for (const auto& s : batch) {
    plane_counts[static_cast<int>(s.plane)]++;
    volume_counts[s.volume_index]++;
  }
  for (int c : plane_counts) CHECK(std::abs(c / 10000.0 - 1.0 / 3.0) < 0.02);
  for (int c : volume_counts) CHECK(c > 0);
}

TEST_CASE("sampling is deterministic for a fixed seed") {
  const std::vector<TrainingCase> ds = {coded_case({8, 10, 12})};
  TrainConfig cfg;
  cfg.subimage_size = 9;
  cfg.batch_size = 8;
  aseg::Rng r1(77), r2(77);
  auto a = aseg::sample_minibatch(ds, cfg, 5, r1);
  auto b = aseg::sample_minibatch(ds, cfg, 5, r2);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image.data == b[i].image.data);
    CHECK(a[i].labels.data == b[i].labels.data);
    CHECK(a[i].plane == b[i].plane);
  }
}

TEST_CASE("preconditions are enforced") {
  TrainConfig cfg;
  cfg.subimage_size = 9;
  aseg::Rng rng(1);
  CHECK_THROWS_AS((void)aseg::sample_minibatch({}, cfg, 5, rng), std::invalid_argument);
  std::vector<TrainingCase> hu = {coded_case({5, 5, 5})};
  hu[0].image.unit = aseg::Volume::Unit::hounsfield;
  CHECK_THROWS_AS((void)aseg::sample_minibatch(hu, cfg, 5, rng), std::invalid_argument);
  std::vector<TrainingCase> ok = {coded_case({5, 5, 5})};
  cfg.subimage_size = 4;  // smaller than the receptive field
  CHECK_THROWS_AS((void)aseg::sample_minibatch(ok, cfg, 5, rng), std::invalid_argument);
}

TEST_SUITE_END();
