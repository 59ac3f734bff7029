#pragma once

#include <utility>
#include <vector>

#include "refcomp/image.hpp"
#include "refcomp/rng.hpp"

namespace refcomp {

struct Rect {
  int y0 = 0, x0 = 0, h = 0, w = 0;
};

/// Parameters of the training-time occlusion sampler.
struct MaskSpec {
  std::pair<int, int> repeats_range{1, 30};
  double grid_cell_fraction = 0.15;  // of min(H, W)
  double random_ratio = 0.5;         // probability of the grid family
  int dilate_px = 0;

  void validate() const;
};

enum class MaskBranch { grid, body_shape };

enum class BodyMaskVariant { random, full, sub_box };

/// The rectangle stream behind random_grid_mask. Exposed so the coverage can be
/// checked against an independent rasterizer.
std::vector<Rect> random_grid_rects(int h, int w, Rng& rng, std::pair<int, int> repeats_range,
                                    double cell_fraction);

Mask rasterize_rects(int h, int w, const std::vector<Rect>& rects);

Mask random_grid_mask(int h, int w, Rng& rng, std::pair<int, int> repeats_range, double cell_fraction);

/// Square (Chebyshev) dilation.
Mask dilate(const Mask& m, int px);

Mask body_shape_mask(const Mask& segmentation, Rng& rng, int dilate_px,
                     BodyMaskVariant variant = BodyMaskVariant::random);

struct SampledMask {
  Mask mask;
  MaskBranch branch;
};

SampledMask sample_training_mask(const Mask& segmentation, Rng& rng, const MaskSpec& spec);

/// Number of set pixels in each factor x factor footprint, row-major over cells.
std::vector<int> footprint_counts(const Mask& m, int factor);

/// A cell is set iff at least half of its footprint is set.
Mask downsample_mask(const Mask& m, int factor);

Raster apply_mask(const Raster& image, const Mask& m, double fill);

}  // namespace refcomp
