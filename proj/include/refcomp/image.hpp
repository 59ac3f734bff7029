#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "refcomp/errors.hpp"

namespace refcomp {

/// H x W x 3 image, interleaved RGB, values nominally in [0, 1].
struct Raster {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  Raster() = default;
  Raster(int h, int w, double fill = 0.0);

  double& at(int y, int x, int c) { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  double at(int y, int x, int c) const { return data[(static_cast<size_t>(y) * width + x) * 3 + c]; }
  bool same_shape(const Raster& o) const { return height == o.height && width == o.width; }
  bool operator==(const Raster&) const = default;
};

/// H x W binary map. 1 = selected.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0);

  std::uint8_t& at(int y, int x) { return bits[static_cast<size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return bits[static_cast<size_t>(y) * width + x]; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
  bool operator==(const Mask&) const = default;
};

Mask mask_not(const Mask& m);
Mask mask_or(const Mask& a, const Mask& b);
Mask mask_and(const Mask& a, const Mask& b);
bool mask_subset(const Mask& inner, const Mask& outer);

// PNG codecs. Rasters quantize to 8-bit RGB; masks are 8-bit gray, 0 -> 0 and
// 1 -> 255, decoded with a threshold at 128.
std::vector<std::uint8_t> encode_png(const Raster& r);
std::vector<std::uint8_t> encode_png(const Mask& m);
Raster decode_png_raster(std::span<const std::uint8_t> bytes);
Mask decode_png_mask(std::span<const std::uint8_t> bytes);

void write_png(const std::filesystem::path& p, const Raster& r);
void write_png(const std::filesystem::path& p, const Mask& m);
Raster read_png_raster(const std::filesystem::path& p);
Mask read_png_mask(const std::filesystem::path& p);

std::vector<std::uint8_t> read_file(const std::filesystem::path& p);
void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes);
/// Write to a sibling temp file then rename over the target.
void write_file_atomic(const std::filesystem::path& p, std::span<const std::uint8_t> bytes);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace refcomp
