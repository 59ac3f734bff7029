#pragma once

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include "refcomp/model.hpp"
#include "refcomp/rng.hpp"

namespace refcomp::testing {

inline Raster random_raster(int h, int w, Rng& rng) {
  Raster r(h, w);
  for (auto& v : r.data) v = uniform01(rng);
  return r;
}

inline Mask random_rect_mask(int h, int w, Rng& rng, int min_side = 2) {
  Mask m(h, w);
  const int rh = uniform_int(rng, min_side, h), rw = uniform_int(rng, min_side, w);
  const int y0 = uniform_int(rng, 0, h - rh), x0 = uniform_int(rng, 0, w - rw);
  for (int y = y0; y < y0 + rh; ++y)
    for (int x = x0; x < x0 + rw; ++x) m.at(y, x) = 1;
  return m;
}

inline nn::Mat random_mat(Eigen::Index r, Eigen::Index c, Rng& rng, double scale = 1.0) {
  nn::Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, -scale, scale);
  return m;
}

/// A small architecture that runs in milliseconds.
inline ModelConfig tiny_config(int image_size = 16) {
  ModelConfig c;
  c.image_size = image_size;
  c.latent_factor = 4;
  c.base_channels = 8;
  c.channel_multipliers = {1, 2};
  c.attention_levels = {0, 1};
  c.heads = 2;
  c.token_dim = 8;
  c.semantic_token_count = 2;
  c.semantic_dim = 8;
  c.max_prompt_tokens = 4;
  return c;
}

/// References with distinct labels, random content and rectangle masks.
inline std::vector<ReferencePart> random_references(int count, int size, Rng& rng) {
  std::vector<ReferencePart> refs;
  std::vector<PartLabel> labels(kAllParts.begin(), kAllParts.end());
  std::shuffle(labels.begin(), labels.end(), rng);
  for (int i = 0; i < count; ++i) {
    ReferencePart r;
    r.label = labels[static_cast<size_t>(i)];
    r.image = random_raster(size, size, rng);
    r.mask = random_rect_mask(size, size, rng, size / 4);
    refs.push_back(std::move(r));
  }
  return refs;
}

inline LatentGrid random_latent(const ModelConfig& c, Rng& rng) {
  const int n = c.latent_size();
  return {n, n, c.latent_channels(), random_mat(n * n, c.latent_channels(), rng)};
}

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("refcomp-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

}  // namespace refcomp::testing
