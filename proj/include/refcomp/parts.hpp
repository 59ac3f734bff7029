#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "refcomp/image.hpp"

namespace refcomp {

/// The six appearance types. Declaration order is the canonical order used
/// wherever references are concatenated.
enum class PartLabel : int {
  upper_clothes = 0,
  lower_clothes,
  whole_body_clothes,
  hair_headwear,
  face,
  shoes,
};

inline constexpr int kPartCount = 6;
inline constexpr std::array<PartLabel, kPartCount> kAllParts = {
    PartLabel::upper_clothes, PartLabel::lower_clothes, PartLabel::whole_body_clothes,
    PartLabel::hair_headwear, PartLabel::face,          PartLabel::shoes};

std::string_view part_name(PartLabel p);
/// Throws InvalidArgument on unknown names.
PartLabel parse_part(std::string_view name);

struct ReferencePart {
  PartLabel label = PartLabel::upper_clothes;
  Raster image;
  Mask mask;  // region of the part within image
  std::string caption;

  /// Nonempty mask with the image's dimensions.
  void validate() const;
};

/// One evaluation unit: occluded source, its inpainting area, part references,
/// optional prompt and the ground truth.
struct BenchmarkGroup {
  std::string group_id;
  Raster source;
  Mask source_mask;
  std::vector<ReferencePart> references;
  std::optional<std::string> prompt;
  Raster ground_truth;

  /// Throws InvalidArgument naming the group on any violated invariant.
  void validate() const;
};

}  // namespace refcomp
