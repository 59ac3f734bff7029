#include "refcomp/image.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

namespace refcomp {

Raster::Raster(int h, int w, double fill)
    : height(h), width(w), data(static_cast<size_t>(h) * w * 3, fill) {
  if (h < 0 || w < 0) throw InvalidArgument("raster dimensions must be nonnegative");
}

Mask::Mask(int h, int w, std::uint8_t fill)
    : height(h), width(w), bits(static_cast<size_t>(h) * w, fill ? 1 : 0) {
  if (h < 0 || w < 0) throw InvalidArgument("mask dimensions must be nonnegative");
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

namespace {

void require_same(const Mask& a, const Mask& b) {
  if (a.height != b.height || a.width != b.width) throw InvalidArgument("mask shape mismatch");
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::vector<std::uint8_t> write_png_memory(const std::vector<std::uint8_t>& pixels, int h, int w,
                                           png_uint_32 format) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(w);
  img.height = static_cast<png_uint_32>(h);
  img.format = format;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + img.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw IoError(std::string("png encode failed: ") + img.message);
  out.resize(size);
  return out;
}

std::vector<std::uint8_t> read_png_memory(std::span<const std::uint8_t> bytes, png_uint_32 format,
                                          int& h, int& w) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size()))
    throw IoError(std::string("png decode failed: ") + img.message);
  img.format = format;
  std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw IoError(std::string("png decode failed: ") + img.message);
  }
  h = static_cast<int>(img.height);
  w = static_cast<int>(img.width);
  return pixels;
}

}  // namespace

Mask mask_not(const Mask& m) {
  Mask out = m;
  for (auto& b : out.bits) b = b ? 0 : 1;
  return out;
}

Mask mask_or(const Mask& a, const Mask& b) {
  require_same(a, b);
  Mask out = a;
  for (size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = (a.bits[i] | b.bits[i]) ? 1 : 0;
  return out;
}

Mask mask_and(const Mask& a, const Mask& b) {
  require_same(a, b);
  Mask out = a;
  for (size_t i = 0; i < out.bits.size(); ++i) out.bits[i] = (a.bits[i] & b.bits[i]) ? 1 : 0;
  return out;
}

bool mask_subset(const Mask& inner, const Mask& outer) {
  require_same(inner, outer);
  for (size_t i = 0; i < inner.bits.size(); ++i)
    if (inner.bits[i] && !outer.bits[i]) return false;
  return true;
}

std::vector<std::uint8_t> encode_png(const Raster& r) {
  std::vector<std::uint8_t> px(r.data.size());
  std::transform(r.data.begin(), r.data.end(), px.begin(), quantize);
  return write_png_memory(px, r.height, r.width, PNG_FORMAT_RGB);
}

std::vector<std::uint8_t> encode_png(const Mask& m) {
  std::vector<std::uint8_t> px(m.bits.size());
  std::transform(m.bits.begin(), m.bits.end(), px.begin(),
                 [](std::uint8_t b) { return static_cast<std::uint8_t>(b ? 255 : 0); });
  return write_png_memory(px, m.height, m.width, PNG_FORMAT_GRAY);
}

Raster decode_png_raster(std::span<const std::uint8_t> bytes) {
  int h = 0, w = 0;
  auto px = read_png_memory(bytes, PNG_FORMAT_RGB, h, w);
  Raster r(h, w);
  for (size_t i = 0; i < px.size(); ++i) r.data[i] = px[i] / 255.0;
  return r;
}

Mask decode_png_mask(std::span<const std::uint8_t> bytes) {
  int h = 0, w = 0;
  auto px = read_png_memory(bytes, PNG_FORMAT_GRAY, h, w);
  Mask m(h, w);
  for (size_t i = 0; i < px.size(); ++i) m.bits[i] = px[i] >= 128 ? 1 : 0;
  return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot open " + p.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  if (p.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(p.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + p.parent_path().string());
  }
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + p.string());
}

void write_file_atomic(const std::filesystem::path& p, std::span<const std::uint8_t> bytes) {
  auto tmp = p;
  tmp += ".tmp";
  write_file(tmp, bytes);
  std::error_code ec;
  std::filesystem::rename(tmp, p, ec);
  if (ec) throw IoError("cannot replace " + p.string() + ": " + ec.message());
}

void write_png(const std::filesystem::path& p, const Raster& r) { write_file(p, encode_png(r)); }
void write_png(const std::filesystem::path& p, const Mask& m) { write_file(p, encode_png(m)); }

Raster read_png_raster(const std::filesystem::path& p) {
  try {
    return decode_png_raster(read_file(p));
  } catch (const IoError& e) {
    throw IoError(p.string() + ": " + e.what());
  }
}

Mask read_png_mask(const std::filesystem::path& p) {
  try {
    return decode_png_mask(read_file(p));
  } catch (const IoError& e) {
    throw IoError(p.string() + ": " + e.what());
  }
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                          static_cast<int>(bytes.size()));
  out.resize(static_cast<size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) throw InvalidArgument("base64 length not a multiple of 4");
  std::vector<std::uint8_t> out(3 * text.size() / 4);
  int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                          static_cast<int>(text.size()));
  if (n < 0) throw InvalidArgument("invalid base64 payload");
  // EVP_DecodeBlock keeps padding bytes as zeros.
  size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<size_t>(n) - pad);
  return out;
}

}  // namespace refcomp
