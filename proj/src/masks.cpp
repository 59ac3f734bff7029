#include "refcomp/masks.hpp"

#include <algorithm>
#include <cmath>

namespace refcomp {

void MaskSpec::validate() const {
  auto [lo, hi] = repeats_range;
  if (lo < 0 || hi < lo) throw InvalidArgument("mask repeats_range must satisfy 0 <= lo <= hi");
  if (!(grid_cell_fraction > 0.0 && grid_cell_fraction <= 1.0))
    throw InvalidArgument("grid_cell_fraction must be in (0, 1]");
  if (!(random_ratio >= 0.0 && random_ratio <= 1.0))
    throw InvalidArgument("random_ratio must be in [0, 1]");
  if (dilate_px < 0) throw InvalidArgument("dilate_px must be nonnegative");
}

std::vector<Rect> random_grid_rects(int h, int w, Rng& rng, std::pair<int, int> repeats_range,
                                    double cell_fraction) {
  if (h <= 0 || w <= 0) throw InvalidArgument("grid mask dimensions must be positive");
  auto [lo, hi] = repeats_range;
  if (lo < 0 || hi < lo) throw InvalidArgument("grid mask repeats_range is empty");
  if (!(cell_fraction > 0.0 && cell_fraction <= 1.0))
    throw InvalidArgument("grid mask cell_fraction must be in (0, 1]");

  const double cell = cell_fraction * std::min(h, w);
  const int k = uniform_int(rng, lo, hi);
  std::vector<Rect> rects;
  rects.reserve(static_cast<size_t>(k));
  for (int i = 0; i < k; ++i) {
    Rect r;
    r.h = std::clamp(static_cast<int>(std::lround(uniform(rng, 0.5, 1.5) * cell)), 1, h);
    r.w = std::clamp(static_cast<int>(std::lround(uniform(rng, 0.5, 1.5) * cell)), 1, w);
    r.y0 = uniform_int(rng, 0, h - r.h);
    r.x0 = uniform_int(rng, 0, w - r.w);
    rects.push_back(r);
  }
  return rects;
}

Mask rasterize_rects(int h, int w, const std::vector<Rect>& rects) {
  Mask m(h, w);
  for (const auto& r : rects) {
    const int y1 = std::min(h, r.y0 + r.h), x1 = std::min(w, r.x0 + r.w);
    for (int y = std::max(0, r.y0); y < y1; ++y)
      std::fill(m.bits.begin() + static_cast<long>(y) * w + std::max(0, r.x0),
                m.bits.begin() + static_cast<long>(y) * w + x1, std::uint8_t{1});
  }
  return m;
}

Mask random_grid_mask(int h, int w, Rng& rng, std::pair<int, int> repeats_range, double cell_fraction) {
  return rasterize_rects(h, w, random_grid_rects(h, w, rng, repeats_range, cell_fraction));
}

Mask dilate(const Mask& m, int px) {
  if (px < 0) throw InvalidArgument("dilation radius must be nonnegative");
  if (px == 0) return m;
  // Separable: rows then columns.
  Mask rows(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!m.at(y, x)) continue;
      for (int dx = std::max(0, x - px); dx <= std::min(m.width - 1, x + px); ++dx) rows.at(y, dx) = 1;
    }
  Mask out(m.height, m.width);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x) {
      if (!rows.at(y, x)) continue;
      for (int dy = std::max(0, y - px); dy <= std::min(m.height - 1, y + px); ++dy) out.at(dy, x) = 1;
    }
  return out;
}

namespace {

struct Box {
  int y0, x0, y1, x1;  // half-open
};

Box bounding_box(const Mask& m) {
  Box b{m.height, m.width, 0, 0};
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) {
        b.y0 = std::min(b.y0, y);
        b.x0 = std::min(b.x0, x);
        b.y1 = std::max(b.y1, y + 1);
        b.x1 = std::max(b.x1, x + 1);
      }
  return b;
}

Mask sub_box(const Mask& silhouette, Rng& rng) {
  const Box bb = bounding_box(silhouette);
  const auto total = static_cast<double>(silhouette.count());
  const int bh = bb.y1 - bb.y0, bw = bb.x1 - bb.x0;
  for (int attempt = 0; attempt < 64; ++attempt) {
    const int h = uniform_int(rng, std::max(1, bh / 4), bh);
    const int w = uniform_int(rng, std::max(1, bw / 4), bw);
    const int y0 = uniform_int(rng, bb.y0, bb.y1 - h);
    const int x0 = uniform_int(rng, bb.x0, bb.x1 - w);
    Mask out(silhouette.height, silhouette.width);
    std::size_t kept = 0;
    for (int y = y0; y < y0 + h; ++y)
      for (int x = x0; x < x0 + w; ++x)
        if (silhouette.at(y, x)) {
          out.at(y, x) = 1;
          ++kept;
        }
    if (static_cast<double>(kept) >= 0.25 * total) return out;
  }
  return silhouette;
}

}  // namespace

Mask body_shape_mask(const Mask& segmentation, Rng& rng, int dilate_px, BodyMaskVariant variant) {
  if (segmentation.empty()) throw InvalidArgument("body_shape_mask: empty segmentation");
  Mask sil = dilate(segmentation, dilate_px);
  if (variant == BodyMaskVariant::random)
    variant = bernoulli(rng, 0.5) ? BodyMaskVariant::full : BodyMaskVariant::sub_box;
  if (variant == BodyMaskVariant::full) return sil;
  return sub_box(sil, rng);
}

SampledMask sample_training_mask(const Mask& segmentation, Rng& rng, const MaskSpec& spec) {
  spec.validate();
  if (bernoulli(rng, spec.random_ratio))
    return {random_grid_mask(segmentation.height, segmentation.width, rng, spec.repeats_range,
                             spec.grid_cell_fraction),
            MaskBranch::grid};
  return {body_shape_mask(segmentation, rng, spec.dilate_px), MaskBranch::body_shape};
}

std::vector<int> footprint_counts(const Mask& m, int factor) {
  if (factor <= 0 || m.height % factor != 0 || m.width % factor != 0)
    throw InvalidArgument("mask dimensions must be divisible by the downsample factor");
  const int lh = m.height / factor, lw = m.width / factor;
  std::vector<int> counts(static_cast<size_t>(lh) * lw, 0);
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) ++counts[static_cast<size_t>(y / factor) * lw + x / factor];
  return counts;
}

Mask downsample_mask(const Mask& m, int factor) {
  const auto counts = footprint_counts(m, factor);
  Mask out(m.height / factor, m.width / factor);
  for (size_t i = 0; i < counts.size(); ++i) out.bits[i] = 2 * counts[i] >= factor * factor ? 1 : 0;
  return out;
}

Raster apply_mask(const Raster& image, const Mask& m, double fill) {
  if (image.height != m.height || image.width != m.width)
    throw InvalidArgument("apply_mask: image and mask shapes differ");
  Raster out = image;
  for (size_t i = 0; i < m.bits.size(); ++i)
    if (m.bits[i])
      for (int c = 0; c < 3; ++c) out.data[i * 3 + c] = fill;
  return out;
}

}  // namespace refcomp
