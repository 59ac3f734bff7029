#include <doctest.h>

#include "refcomp/masks.hpp"
#include "support.hpp"

using namespace refcomp;
using namespace refcomp::testing;

namespace {

Mask silhouette_disc(int size) {
  Mask m(size, size);
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x)
      if ((y - size / 2) * (y - size / 2) + (x - size / 2) * (x - size / 2) < (size / 3) * (size / 3)) m.at(y, x) = 1;
  return m;
}

}  // namespace

TEST_CASE("random grid mask draws between min and max rectangles") {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const auto rects = random_grid_rects(64, 64, rng, {1, 30}, 0.15);
    CHECK(rects.size() >= 1);
    CHECK(rects.size() <= 30);
    for (const auto& r : rects) {
      CHECK(r.y0 >= 0);
      CHECK(r.x0 >= 0);
      CHECK(r.y0 + r.h <= 64);
      CHECK(r.x0 + r.w <= 64);
    }
  }
}

TEST_CASE("zero repeats masks nothing") {
  Rng rng(3);
  CHECK(random_grid_mask(64, 64, rng, {0, 0}, 0.15).count() == 0);
}

TEST_CASE("grid mask coverage equals an independent rasterization of the same rectangles") {
  Rng a(7), b(7);
  const Mask m = random_grid_mask(64, 64, a, {5, 5}, 0.15);
  const auto rects = random_grid_rects(64, 64, b, {5, 5}, 0.15);
  CHECK(rects.size() == 5);
  std::vector<std::vector<int>> hit(64, std::vector<int>(64, 0));
  for (const auto& r : rects)
    for (int y = r.y0; y < r.y0 + r.h; ++y)
      for (int x = r.x0; x < r.x0 + r.w; ++x) hit[y][x] = 1;
  std::size_t covered = 0;
  for (const auto& row : hit)
    for (int v : row) covered += static_cast<std::size_t>(v);
  CHECK(m.count() == covered);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) CHECK(m.at(y, x) == hit[y][x]);
}

TEST_CASE("grid mask rejects bad arguments") {
  Rng rng(1);
  CHECK_THROWS_AS(random_grid_mask(0, 64, rng, {1, 30}, 0.15), InvalidArgument);
  CHECK_THROWS_AS(random_grid_mask(64, 64, rng, {5, 2}, 0.15), InvalidArgument);
  CHECK_THROWS_AS(random_grid_mask(64, 64, rng, {1, 3}, 0.0), InvalidArgument);
}

TEST_CASE("body shape mask variants") {
  const Mask s = silhouette_disc(64);
  Rng rng(3);
  CHECK(body_shape_mask(s, rng, 0, BodyMaskVariant::full) == s);
  CHECK(mask_subset(s, body_shape_mask(s, rng, 2, BodyMaskVariant::full)));
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    const Mask sub = body_shape_mask(s, r, 0, BodyMaskVariant::sub_box);
    std::size_t inside = 0, total = 0;
    for (size_t i = 0; i < s.bits.size(); ++i) {
      total += s.bits[i];
      inside += s.bits[i] && sub.bits[i];
    }
    CHECK(static_cast<double>(sub.count()) / static_cast<double>(total) >= 0.25);
    CHECK(inside == sub.count());
  }
  CHECK_THROWS_AS(body_shape_mask(Mask(64, 64), rng, 0), InvalidArgument);
}

TEST_CASE("dilation is a square neighbourhood") {
  Mask m(9, 9);
  m.at(4, 4) = 1;
  const Mask d = dilate(m, 2);
  CHECK(d.count() == 25);
  CHECK(d.at(2, 2) == 1);
  CHECK(d.at(1, 4) == 0);
}

TEST_CASE("training mask branch frequencies follow random_ratio") {
  const Mask s = silhouette_disc(64);
  MaskSpec spec;
  Rng rng(11);
  int grid = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) grid += sample_training_mask(s, rng, spec).branch == MaskBranch::grid;
  CHECK(std::abs(grid / static_cast<double>(n) - 0.5) <= 0.02);
  spec.random_ratio = 0.0;
  for (int i = 0; i < 200; ++i) CHECK(sample_training_mask(s, rng, spec).branch == MaskBranch::body_shape);
  spec.random_ratio = 1.0;
  for (int i = 0; i < 200; ++i) CHECK(sample_training_mask(s, rng, spec).branch == MaskBranch::grid);
  spec.random_ratio = 1.5;
  CHECK_THROWS_AS(spec.validate(), InvalidArgument);
}

TEST_CASE("downsample mask") {
  CHECK(downsample_mask(Mask(8, 8, 1), 4) == Mask(2, 2, 1));
  CHECK(downsample_mask(Mask(8, 8, 0), 4) == Mask(2, 2, 0));
  Mask quad(8, 8);
  for (int y = 4; y < 8; ++y)
    for (int x = 0; x < 4; ++x) quad.at(y, x) = 1;
  const Mask q = downsample_mask(quad, 4);
  CHECK(q.count() == 1);
  CHECK(q.at(1, 0) == 1);
  CHECK_THROWS_AS(downsample_mask(Mask(10, 8), 4), InvalidArgument);

  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Mask m(16, 16);
    for (auto& b : m.bits) b = bernoulli(rng, 0.5);
    const Mask d = downsample_mask(m, 4);
    for (int cy = 0; cy < 4; ++cy)
      for (int cx = 0; cx < 4; ++cx) {
        int count = 0;
        for (int y = 0; y < 4; ++y)
          for (int x = 0; x < 4; ++x) count += m.at(cy * 4 + y, cx * 4 + x);
        CHECK(d.at(cy, cx) == (count >= 8 ? 1 : 0));
      }
    Mask bigger = m;
    for (auto& b : bigger.bits) b = b || bernoulli(rng, 0.3);
    CHECK(mask_subset(d, downsample_mask(bigger, 4)));
  }
}

TEST_CASE("apply mask") {
  Rng rng(2);
  const Raster img = random_raster(8, 8, rng);
  CHECK(apply_mask(img, Mask(8, 8, 0), 0.0) == img);
  const Raster half = apply_mask(img, Mask(8, 8, 1), 0.5);
  for (double v : half.data) CHECK(v == 0.5);
  const Mask m = random_rect_mask(8, 8, rng);
  const Raster both = apply_mask(apply_mask(img, m, 0.0), mask_not(m), 0.0);
  for (double v : both.data) CHECK(v == 0.0);
  CHECK_THROWS_AS(apply_mask(img, Mask(4, 8), 0.0), InvalidArgument);
}

TEST_CASE("mask png round trip is exact") {
  Rng rng(9);
  Mask m(13, 21);
  for (auto& b : m.bits) b = bernoulli(rng, 0.4);
  const auto bytes = encode_png(m);
  CHECK(decode_png_mask(bytes) == m);
  CHECK(encode_png(decode_png_mask(bytes)) == bytes);
}
