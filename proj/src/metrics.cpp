#include "refcomp/metrics.hpp"

#include <cmath>
#include <set>

#include <fmt/format.h>

#include "refcomp/params.hpp"
#include "refcomp/rng.hpp"
#include "refcomp/semantic.hpp"

namespace refcomp {

namespace {

void require_same(const Raster& a, const Raster& b, const Mask& m) {
  if (!a.same_shape(b) || m.height != a.height || m.width != a.width)
    throw InvalidArgument("metric inputs differ in size");
}

}  // namespace

double masked_psnr(const Raster& a, const Raster& b, const Mask& m) {
  require_same(a, b, m);
  if (m.empty()) throw InvalidArgument("masked_psnr: empty mask");
  double acc = 0.0;
  long n = 0;
  for (int y = 0; y < a.height; ++y)
    for (int x = 0; x < a.width; ++x) {
      if (!m.at(y, x)) continue;
      for (int c = 0; c < 3; ++c) {
        const double d = a.at(y, x, c) - b.at(y, x, c);
        acc += d * d;
      }
      n += 3;
    }
  const double mse = acc / static_cast<double>(n);
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

Box mask_bbox(const Mask& m) {
  Box b{m.height, m.width, 0, 0};
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (m.at(y, x)) {
        b.y0 = std::min(b.y0, y);
        b.x0 = std::min(b.x0, x);
        b.y1 = std::max(b.y1, y + 1);
        b.x1 = std::max(b.x1, x + 1);
      }
  if (b.y1 == 0) throw InvalidArgument("bounding box of an empty mask");
  return b;
}

Raster crop(const Raster& r, const Box& b) {
  Raster out(b.height(), b.width());
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(y, x, c) = r.at(b.y0 + y, b.x0 + x, c);
  return out;
}

Mask crop(const Mask& m, const Box& b) {
  Mask out(b.height(), b.width());
  for (int y = 0; y < out.height; ++y)
    for (int x = 0; x < out.width; ++x) out.at(y, x) = m.at(b.y0 + y, b.x0 + x);
  return out;
}

double masked_ssim(const Raster& a, const Raster& b, const Mask& m) {
  require_same(a, b, m);
  if (m.empty()) throw InvalidArgument("masked_ssim: empty mask");
  const Box box = mask_bbox(m);
  if (box.height() < kSsimWindow || box.width() < kSsimWindow)
    throw InvalidArgument(fmt::format("masked_ssim: mask bounding box {}x{} is smaller than the {}x{} window",
                                      box.height(), box.width(), kSsimWindow, kSsimWindow));
  const Raster ca = crop(a, box), cb = crop(b, box);
  const Mask cm = crop(m, box);

  constexpr int r = kSsimWindow / 2;
  std::array<double, kSsimWindow> g1{};
  double total = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    g1[static_cast<size_t>(i)] = std::exp(-((i - r) * (i - r)) / (2.0 * 1.5 * 1.5));
    total += g1[static_cast<size_t>(i)];
  }
  for (auto& v : g1) v /= total;
  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;

  std::vector<std::pair<int, int>> centres, fallback;
  for (int y = r; y < cm.height - r; ++y)
    for (int x = r; x < cm.width - r; ++x) {
      fallback.emplace_back(y, x);
      if (cm.at(y, x)) centres.emplace_back(y, x);
    }
  if (centres.empty()) centres = fallback;

  double acc = 0.0;
  for (auto [cy, cx] : centres)
    for (int c = 0; c < 3; ++c) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
          const double w = g1[static_cast<size_t>(dy + r)] * g1[static_cast<size_t>(dx + r)];
          const double va = ca.at(cy + dy, cx + dx, c), vb = cb.at(cy + dy, cx + dx, c);
          ma += w * va;
          mb += w * vb;
          saa += w * va * va;
          sbb += w * vb * vb;
          sab += w * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      acc += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
  return acc / static_cast<double>(centres.size() * 3);
}

// ---- toy backends --------------------------------------------------------------

namespace {

/// Image: per-patch seeded linear projections of the image centred on its
/// own mean, concatenated. Text: seeded bag of words in the same space.
class ToyPatchEmbedder final : public EmbeddingBackend {
 public:
  ToyPatchEmbedder(std::string id, int grid, int per_patch, std::uint64_t seed)
      : id_(std::move(id)), grid_(grid), per_patch_(per_patch), seed_(seed) {}

  std::string id() const override { return id_; }

  nn::RowVec embed_image(const Raster& img) const override {
    if (img.height < grid_ || img.width < grid_) throw InvalidArgument(id_ + ": image smaller than the patch grid");
    double mean = 0.0;
    for (double v : img.data) mean += v;
    mean /= static_cast<double>(img.data.size());
    nn::RowVec out = nn::RowVec::Zero(grid_ * grid_ * per_patch_);
    for (int py = 0; py < grid_; ++py)
      for (int px = 0; px < grid_; ++px) {
        const int y0 = py * img.height / grid_, y1 = (py + 1) * img.height / grid_;
        const int x0 = px * img.width / grid_, x1 = (px + 1) * img.width / grid_;
        Rng rng(mix_seed(seed_, static_cast<std::uint64_t>(py * grid_ + px)));
        std::normal_distribution<double> n(0.0, 1.0);
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x)
            for (int c = 0; c < 3; ++c) {
              const double v = img.at(y, x, c) - mean;
              for (int k = 0; k < per_patch_; ++k) out((py * grid_ + px) * per_patch_ + k) += v * n(rng);
            }
      }
    return out;
  }

  nn::RowVec embed_text(std::string_view text) const override {
    nn::RowVec out = nn::RowVec::Zero(grid_ * grid_ * per_patch_);
    for (const auto& w : tokenize_words(text)) out += word_vector(w, static_cast<int>(out.size()), seed_);
    return out;
  }

 private:
  std::string id_;
  int grid_, per_patch_;
  std::uint64_t seed_;
};

/// Multi-scale mean absolute difference of the raw values and of seeded 3x3
/// filter responses. Linear in (a - b), so zero iff the crops agree.
class ToyFilterDistance final : public PerceptualBackend {
 public:
  ToyFilterDistance(std::string id, int filters, int scales, std::uint64_t seed)
      : id_(std::move(id)), scales_(scales) {
    Rng rng(seed);
    for (int f = 0; f < filters; ++f) bank_.push_back(nn::random_normal(1, 27, 1.0 / std::sqrt(27.0), rng));
  }

  std::string id() const override { return id_; }

  double distance(const Raster& a, const Raster& b) const override {
    if (!a.same_shape(b)) throw InvalidArgument(id_ + ": inputs differ in size");
    Raster d(a.height, a.width);
    for (size_t i = 0; i < d.data.size(); ++i) d.data[i] = a.data[i] - b.data[i];
    double total = 0.0;
    int used = 0;
    for (int s = 0; s < scales_ && d.height >= 1 && d.width >= 1; ++s) {
      total += level_distance(d);
      ++used;
      if (d.height < 2 || d.width < 2) break;
      d = pool(d);
    }
    return total / used;
  }

 private:
  double level_distance(const Raster& d) const {
    double raw = 0.0;
    for (double v : d.data) raw += std::abs(v);
    raw /= static_cast<double>(d.data.size());
    double resp = 0.0;
    for (int y = 0; y < d.height; ++y)
      for (int x = 0; x < d.width; ++x)
        for (const auto& f : bank_) {
          double v = 0.0;
          int k = 0;
          for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx)
              for (int c = 0; c < 3; ++c, ++k) {
                const int yy = std::clamp(y + dy, 0, d.height - 1), xx = std::clamp(x + dx, 0, d.width - 1);
                v += f(0, k) * d.at(yy, xx, c);
              }
          resp += std::abs(v);
        }
    resp /= static_cast<double>(d.height) * d.width * static_cast<double>(bank_.size());
    return 0.5 * (raw + resp);
  }

  static Raster pool(const Raster& d) {
    Raster out(d.height / 2, d.width / 2);
    for (int y = 0; y < out.height; ++y)
      for (int x = 0; x < out.width; ++x)
        for (int c = 0; c < 3; ++c)
          out.at(y, x, c) = 0.25 * (d.at(2 * y, 2 * x, c) + d.at(2 * y + 1, 2 * x, c) + d.at(2 * y, 2 * x + 1, c) +
                                    d.at(2 * y + 1, 2 * x + 1, c));
    return out;
  }

  std::string id_;
  int scales_;
  std::vector<nn::Mat> bank_;
};

}  // namespace

std::unique_ptr<EmbeddingBackend> make_embedding_backend(const std::string& id) {
  if (id == "toy-clip") return std::make_unique<ToyPatchEmbedder>(id, 4, 16, 0xc11b);
  if (id == "toy-dino") return std::make_unique<ToyPatchEmbedder>(id, 8, 8, 0xd1d0);
  throw ConfigError("unknown embedding backend '" + id + "' (registered: toy-clip, toy-dino)");
}

std::unique_ptr<PerceptualBackend> make_perceptual_backend(const std::string& id) {
  if (id == "toy-lpips") return std::make_unique<ToyFilterDistance>(id, 8, 3, 0x1b1b5);
  if (id == "toy-dreamsim") return std::make_unique<ToyFilterDistance>(id, 16, 4, 0xd5e4);
  throw ConfigError("unknown perceptual backend '" + id + "' (registered: toy-lpips, toy-dreamsim)");
}

double cosine_score(const nn::RowVec& a, const nn::RowVec& b) {
  if (a.size() != b.size()) throw InvalidArgument("embedding sizes differ");
  const double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  if (a == b) return 100.0;
  return 100.0 * a.dot(b) / (na * nb);
}

double embedding_similarity(const Raster& a, const Raster& b, const EmbeddingBackend& backend) {
  return cosine_score(backend.embed_image(a), backend.embed_image(b));
}

double embedding_similarity(std::string_view text, const Raster& b, const EmbeddingBackend& backend) {
  return cosine_score(backend.embed_text(text), backend.embed_image(b));
}

double perceptual_distance(const Raster& a, const Raster& b, const Mask& m, const PerceptualBackend& backend) {
  require_same(a, b, m);
  const Box box = mask_bbox(m);
  return backend.distance(crop(a, box), crop(b, box));
}

MetricBackends MetricBackends::create(const MetricBackendIds& ids) {
  MetricBackends b;
  b.clip = make_embedding_backend(ids.clip);
  b.dino = make_embedding_backend(ids.dino);
  b.dreamsim = make_perceptual_backend(ids.dreamsim);
  b.lpips = make_perceptual_backend(ids.lpips);
  return b;
}

MetricBackendIds MetricBackends::ids() const { return {clip->id(), dino->id(), dreamsim->id(), lpips->id()}; }

const std::vector<MetricColumn>& metric_columns() {
  static const std::vector<MetricColumn> cols = {
      {"clip_i", "CLIP-I", &MetricRow::clip_i, true},       {"clip_t", "CLIP-T", &MetricRow::clip_t, true},
      {"dino", "DINO", &MetricRow::dino, true},             {"dreamsim", "DreamSim", &MetricRow::dreamsim, false},
      {"lpips", "LPIPS", &MetricRow::lpips, false},         {"psnr", "PSNR", &MetricRow::psnr, true},
      {"ssim", "SSIM", &MetricRow::ssim, true}};
  return cols;
}

MetricRow compute_metrics(const std::string& group_id, const Raster& completed, const Raster& gt, const Mask& mask,
                          const std::string* prompt, const MetricBackends& backends, bool embed_crop) {
  require_same(completed, gt, mask);
  MetricRow row;
  row.group_id = group_id;
  const Box box = mask_bbox(mask);
  const Raster ea = embed_crop ? crop(completed, box) : completed;
  const Raster eb = embed_crop ? crop(gt, box) : gt;
  row.clip_i = embedding_similarity(ea, eb, *backends.clip);
  row.clip_t = prompt && !prompt->empty() ? embedding_similarity(*prompt, ea, *backends.clip) : 0.0;
  row.dino = embedding_similarity(ea, eb, *backends.dino);
  row.dreamsim = perceptual_distance(completed, gt, mask, *backends.dreamsim);
  row.lpips = perceptual_distance(completed, gt, mask, *backends.lpips);
  row.psnr = masked_psnr(completed, gt, mask);
  row.ssim = masked_ssim(completed, gt, mask);
  return row;
}

MetricReport aggregate_report(std::vector<MetricRow> rows, const MetricBackendIds& backends) {
  if (rows.empty()) throw InvalidArgument("aggregate_report: no rows");
  std::set<std::string> ids;
  for (const auto& r : rows)
    if (!ids.insert(r.group_id).second) throw InvalidArgument("aggregate_report: duplicate group '" + r.group_id + "'");
  MetricReport rep;
  rep.mean.group_id = "MEAN";
  for (const auto& col : metric_columns()) {
    double s = 0.0;
    for (const auto& r : rows) s += r.*col.field;
    rep.mean.*col.field = s / static_cast<double>(rows.size());
  }
  rep.rows = std::move(rows);
  rep.backends = backends;
  return rep;
}

std::string MetricReport::to_csv() const {
  std::string out = "group_id";
  for (const auto& col : metric_columns()) out += fmt::format(",{}", col.key);
  out += '\n';
  auto line = [&](const MetricRow& r) {
    out += r.group_id;
    for (const auto& col : metric_columns()) out += fmt::format(",{:.10g}", r.*col.field);
    out += '\n';
  };
  for (const auto& r : rows) line(r);
  line(mean);
  return out;
}

std::string MetricReport::to_text() const {
  size_t idw = 5;
  for (const auto& r : rows) idw = std::max(idw, r.group_id.size());
  std::string out = fmt::format("{:<{}}", "group", idw);
  for (const auto& col : metric_columns()) out += fmt::format("  {:>9}", col.title);
  out += '\n';
  auto line = [&](const MetricRow& r) {
    out += fmt::format("{:<{}}", r.group_id, idw);
    for (const auto& col : metric_columns()) out += fmt::format("  {:>9.4f}", r.*col.field);
    out += '\n';
  };
  for (const auto& r : rows) line(r);
  line(mean);
  return out;
}

}  // namespace refcomp
