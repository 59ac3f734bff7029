#pragma once

#include <map>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "refcomp/autograd.hpp"
#include "refcomp/image.hpp"

namespace refcomp {

inline constexpr double kPsnrCap = 99.0;
inline constexpr int kSsimWindow = 11;

/// MSE over the masked pixels (all channels), 10·log10(1/MSE), capped.
double masked_psnr(const Raster& a, const Raster& b, const Mask& m);

/// Gaussian-window structural similarity on the mask bounding-box crop,
/// averaged over window centres inside the mask and over channels.
double masked_ssim(const Raster& a, const Raster& b, const Mask& m);

struct Box {
  int y0 = 0, x0 = 0, y1 = 0, x1 = 0;  // half-open
  int height() const { return y1 - y0; }
  int width() const { return x1 - x0; }
};

Box mask_bbox(const Mask& m);
Raster crop(const Raster& r, const Box& b);
Mask crop(const Mask& m, const Box& b);

class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::string id() const = 0;
  virtual nn::RowVec embed_image(const Raster& image) const = 0;
  virtual nn::RowVec embed_text(std::string_view text) const = 0;
};

class PerceptualBackend {
 public:
  virtual ~PerceptualBackend() = default;
  virtual std::string id() const = 0;
  virtual double distance(const Raster& a, const Raster& b) const = 0;
};

/// "toy-clip", "toy-dino". Throws ConfigError otherwise.
std::unique_ptr<EmbeddingBackend> make_embedding_backend(const std::string& id);
/// "toy-lpips", "toy-dreamsim". Throws ConfigError otherwise.
std::unique_ptr<PerceptualBackend> make_perceptual_backend(const std::string& id);

/// Cosine similarity reported ×100. Zero vectors score 0.
double cosine_score(const nn::RowVec& a, const nn::RowVec& b);
double embedding_similarity(const Raster& a, const Raster& b, const EmbeddingBackend& backend);
double embedding_similarity(std::string_view text, const Raster& b, const EmbeddingBackend& backend);
/// Distance between the mask bounding-box crops.
double perceptual_distance(const Raster& a, const Raster& b, const Mask& m, const PerceptualBackend& backend);

struct MetricBackendIds {
  std::string clip = "toy-clip";
  std::string dino = "toy-dino";
  std::string dreamsim = "toy-dreamsim";
  std::string lpips = "toy-lpips";
};

struct MetricBackends {
  std::unique_ptr<EmbeddingBackend> clip, dino;
  std::unique_ptr<PerceptualBackend> dreamsim, lpips;

  static MetricBackends create(const MetricBackendIds& ids);
  MetricBackendIds ids() const;
};

/// One row of the report, columns in reporting order.
struct MetricRow {
  std::string group_id;
  double clip_i = 0, clip_t = 0, dino = 0, dreamsim = 0, lpips = 0, psnr = 0, ssim = 0;

  bool operator==(const MetricRow&) const = default;
};

/// Column titles and accessors in reporting order.
struct MetricColumn {
  const char* key;
  const char* title;
  double MetricRow::*field;
  bool higher_is_better;
};
const std::vector<MetricColumn>& metric_columns();

/// All metrics for one completed image against its ground truth. Embedding
/// metrics use full images unless `embed_crop` is set; CLIP-T is 0 without a
/// prompt.
MetricRow compute_metrics(const std::string& group_id, const Raster& completed, const Raster& ground_truth,
                          const Mask& mask, const std::string* prompt, const MetricBackends& backends,
                          bool embed_crop = false);

struct MetricReport {
  std::vector<MetricRow> rows;
  MetricRow mean;
  MetricBackendIds backends;

  std::size_t group_count() const { return rows.size(); }
  /// One row per group plus a MEAN row.
  std::string to_csv() const;
  /// Aligned plain-text table.
  std::string to_text() const;
};

/// Throws InvalidArgument on an empty row list.
MetricReport aggregate_report(std::vector<MetricRow> rows, const MetricBackendIds& backends);

}  // namespace refcomp
