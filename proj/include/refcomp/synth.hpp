#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "refcomp/masks.hpp"
#include "refcomp/parts.hpp"
#include "refcomp/rng.hpp"

namespace refcomp {

using Color = std::array<double, 3>;

enum class Texture : int { solid = 0, h_stripes, v_stripes, checker, dots };
inline constexpr int kTextureCount = 5;

struct PartPattern {
  std::string color_name;
  Color primary{};
  Color secondary{};
  Texture texture = Texture::solid;
};

/// Size ratios in unscaled canvas pixels.
struct BodyProportions {
  double torso_w = 16, torso_h = 18, leg_len = 19, head_r = 5.8, arm_len = 14;
};

/// Procedural description of one synthetic person. Rendering is a pure
/// function of (spec, pose, background, seed).
struct FigureSpec {
  std::string figure_id;
  std::uint64_t seed = 0;  // make_figure_spec(figure_id, seed) reproduces the spec
  bool whole_body = false;  // a dress replaces upper and lower clothes
  std::array<PartPattern, kPartCount> patterns{};
  Color skin{};
  BodyProportions body{};
  std::uint64_t glyph_seed = 0;

  /// The part carrying the unique glyph.
  PartLabel glyph_part() const { return whole_body ? PartLabel::whole_body_clothes : PartLabel::upper_clothes; }
  bool has_part(PartLabel p) const;
};

FigureSpec make_figure_spec(const std::string& figure_id, std::uint64_t seed);

/// Articulation and placement. Documented ranges are enforced by validate().
struct Pose {
  double shift_x = 0;     // [-5, 5] px
  double shift_y = 0;     // [-2, 2] px
  double arm_left = 0.2;  // [-0.3, 1.3] rad from vertical, outward positive
  double arm_right = 0.2;
  double leg_spread = 0.1;  // [0, 0.35] rad
  double scale = 1.0;       // [0.9, 1.05]

  void validate() const;
};

Pose random_pose(Rng& rng);
/// A pose that differs markedly from `base` (limbs and placement).
Pose different_pose(const Pose& base, Rng& rng);

inline constexpr int kBackgroundCount = 16;

struct RenderedFigure {
  Raster image;
  std::array<Mask, kPartCount> part_masks;
  Mask silhouette;
  Mask glyph_mask;  // pixels painted with the glyph (subset of the glyph part)

  const Mask& part(PartLabel p) const { return part_masks[static_cast<int>(p)]; }
};

inline constexpr int kImageSize = 64;

RenderedFigure generate_figure(const FigureSpec& spec, const Pose& pose, int background, std::uint64_t seed,
                               int size = kImageSize);

std::string part_caption(const FigureSpec& spec, PartLabel p);
std::string figure_caption(const FigureSpec& spec);

struct SampleMeta {
  std::string figure_id;
  std::uint64_t figure_seed = 0;
  Pose pose;
  Pose reference_pose;
  int background = 0;
  int reference_background = 0;
  std::uint64_t render_seed = 0;
  std::string caption;
};

struct TrainingSample {
  Raster target;
  Raster occluded_input;
  Mask source_mask;
  MaskBranch mask_branch = MaskBranch::grid;
  std::vector<ReferencePart> references;
  std::string prompt;
  SampleMeta meta;
};

/// References are all parts visible in a second rendering of the figure.
std::vector<ReferencePart> reference_parts(const FigureSpec& spec, const RenderedFigure& view);

TrainingSample build_training_pair(const FigureSpec& spec, Rng& rng, const MaskSpec& mask_spec,
                                   int size = kImageSize);

struct SyntheticGroup {
  BenchmarkGroup group;
  SampleMeta meta;
  Mask glyph_part_mask;  // in the source view
};

SyntheticGroup build_benchmark_group(const FigureSpec& spec, Rng& rng, const std::string& group_id,
                                     int size = kImageSize);

}  // namespace refcomp
