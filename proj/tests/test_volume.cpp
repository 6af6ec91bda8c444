#include <doctest.h>

#include <aseg/volume.hpp>

#include <stdexcept>

using aseg::LabelVolume;
using aseg::ProbabilityVolume;
using aseg::Volume;

TEST_SUITE_BEGIN("volume");

namespace {

Volume make_hu(std::array<int, 3> dims, float fill) {
  Volume v;
  v.dims = dims;
  v.spacing = {1.0, 1.0, 1.0};
  v.unit = Volume::Unit::hounsfield;
  v.data.assign(aseg::voxel_count(dims), fill);
  return v;
}

}  // namespace

TEST_CASE("z-major flat indexing") {
  Volume v = make_hu({2, 3, 4}, 0.0f);
  // Index (z, y, x) = (1, 2, 3) is the last voxel of a 2x3x4 grid.
  v.at(1, 2, 3) = 7.0f;
  CHECK(v.data[(1 * 3 + 2) * 4 + 3] == 7.0f);
  CHECK(v.data.back() == 7.0f);
  v.data[(0 * 3 + 1) * 4 + 2] = 5.0f;
  CHECK(v.at(0, 1, 2) == 5.0f);
}

TEST_CASE("normalize maps the HU range endpoints to 0 and 1") {
  Volume v = make_hu({1, 1, 4}, 0.0f);
  v.at(0, 0, 0) = -1024.0f;
  v.at(0, 0, 1) = 3071.0f;
  v.at(0, 0, 2) = -2000.0f;  // below air: clamps to 0
  v.at(0, 0, 3) = 5000.0f;   // above range: clamps to 1
  Volume n = aseg::normalize_intensities(v);
  CHECK(n.unit == Volume::Unit::normalized);
  CHECK(n.at(0, 0, 0) == 0.0f);
  CHECK(n.at(0, 0, 1) == 1.0f);
  CHECK(n.at(0, 0, 2) == 0.0f);
  CHECK(n.at(0, 0, 3) == 1.0f);
}

TEST_CASE("normalize maps soft tissue and midpoint to known fractions") {
  Volume v = make_hu({1, 1, 2}, 0.0f);
  v.at(0, 0, 0) = 40.0f;      // soft tissue
  v.at(0, 0, 1) = 1023.5f;    // exact midpoint of [-1024, 3071]
  Volume n = aseg::normalize_intensities(v);
  // (40 + 1024) / 4095 = 1064/4095
  CHECK(n.at(0, 0, 0) == doctest::Approx(0.25982905982905985).epsilon(1e-6));
  CHECK(n.at(0, 0, 1) == doctest::Approx(0.5).epsilon(1e-9));
}

TEST_CASE("normalize preserves dims and spacing and rejects wrong unit") {
  Volume v = make_hu({2, 3, 4}, 100.0f);
  v.spacing = {2.5, 0.7, 0.7};
  Volume n = aseg::normalize_intensities(v);
  CHECK(n.dims == v.dims);
  CHECK(n.spacing == v.spacing);
  CHECK_THROWS_AS((void)aseg::normalize_intensities(n), std::invalid_argument);
}

TEST_CASE("probability volume indexing is class-major") {
  ProbabilityVolume p;
  p.class_count = 2;
  p.dims = {2, 2, 2};
  p.spacing = {1.0, 1.0, 1.0};
  p.data.assign(2 * 8, 0.0f);
  p.at(1, 0, 1, 0) = 0.25f;
  CHECK(p.data[8 + (0 * 2 + 1) * 2 + 0] == 0.25f);
}

TEST_CASE("label volume stores bytes with matching geometry helpers") {
  LabelVolume l;
  l.dims = {1, 2, 2};
  l.spacing = {1.0, 1.0, 1.0};
  l.data.assign(4, 0);
  l.at(0, 1, 1) = 3;
  CHECK(l.data[3] == 3);
  CHECK(aseg::voxel_count(l.dims) == 4);
}

TEST_SUITE_END();
