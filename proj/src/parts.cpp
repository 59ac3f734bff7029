#include "refcomp/parts.hpp"

#include <set>

namespace refcomp {

namespace {
constexpr std::array<std::string_view, kPartCount> kNames = {
    "upper_clothes", "lower_clothes", "whole_body_clothes", "hair_headwear", "face", "shoes"};
}

std::string_view part_name(PartLabel p) { return kNames.at(static_cast<size_t>(p)); }

PartLabel parse_part(std::string_view name) {
  for (int i = 0; i < kPartCount; ++i)
    if (kNames[static_cast<size_t>(i)] == name) return static_cast<PartLabel>(i);
  throw InvalidArgument("unknown part label '" + std::string(name) + "'");
}

void ReferencePart::validate() const {
  if (mask.height != image.height || mask.width != image.width)
    throw InvalidArgument("reference '" + std::string(part_name(label)) + "': mask and image sizes differ");
  if (mask.empty()) throw InvalidArgument("reference '" + std::string(part_name(label)) + "': empty mask");
}

void BenchmarkGroup::validate() const {
  auto fail = [&](const std::string& why) { throw InvalidArgument("group " + group_id + ": " + why); };
  if (source.height == 0 || source.width == 0) fail("empty source image");
  if (!source.same_shape(ground_truth)) fail("source and ground truth sizes differ");
  if (source_mask.height != source.height || source_mask.width != source.width)
    fail("source mask size differs from source image");
  if (source_mask.empty()) fail("empty source mask");
  if (references.empty()) fail("no reference parts");
  std::set<PartLabel> seen;
  for (const auto& r : references) {
    if (!r.image.same_shape(source)) fail("reference '" + std::string(part_name(r.label)) + "' size differs");
    try {
      r.validate();
    } catch (const InvalidArgument& e) {
      fail(e.what());
    }
    if (!seen.insert(r.label).second) fail("duplicate reference label " + std::string(part_name(r.label)));
  }
  for (int y = 0; y < source.height; ++y)
    for (int x = 0; x < source.width; ++x) {
      if (source_mask.at(y, x)) continue;
      for (int c = 0; c < 3; ++c)
        if (source.at(y, x, c) != ground_truth.at(y, x, c)) fail("ground truth differs from source outside mask");
    }
}

}  // namespace refcomp
