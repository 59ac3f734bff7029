#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "refcomp/diffusion.hpp"
#include "refcomp/metrics.hpp"
#include "refcomp/parts.hpp"
#include "refcomp/synth.hpp"
#include "refcomp/training.hpp"

namespace refcomp {

inline constexpr const char* kManifestName = "manifest.json";

/// Writes `<dir>/manifest.json` and `<dir>/<group_id>/{source,mask,gt}.png`
/// plus `<dir>/<group_id>/refs/<label>{,_mask}.png`.
void write_benchmark(const std::filesystem::path& dir, std::span<const BenchmarkGroup> groups);

/// Accepts the manifest path or its directory. Fails on the first bad group,
/// naming it.
std::vector<BenchmarkGroup> load_benchmark(const std::filesystem::path& manifest_or_dir);

/// Group ids double as directory names.
bool valid_group_id(std::string_view id);

/// Fills the masked region of a benchmark group.
class Completer {
 public:
  virtual ~Completer() = default;
  virtual std::string id() const = 0;
  virtual Raster complete(const BenchmarkGroup& group, std::span<const ReferencePart> references,
                          const std::optional<std::string>& prompt, std::uint64_t seed) const = 0;
};

class ModelCompleter final : public Completer {
 public:
  ModelCompleter(const Denoiser& model, SamplerConfig sampler, NoiseSchedule schedule = make_schedule());
  std::string id() const override { return "model"; }
  Raster complete(const BenchmarkGroup& group, std::span<const ReferencePart> references,
                  const std::optional<std::string>& prompt, std::uint64_t seed) const override;

 private:
  const Denoiser& model_;
  SamplerConfig sampler_;
  NoiseSchedule schedule_;
};

/// Returns the ground truth: the upper bound of every metric.
class IdentityOracle final : public Completer {
 public:
  std::string id() const override { return "oracle:identity"; }
  Raster complete(const BenchmarkGroup& group, std::span<const ReferencePart>, const std::optional<std::string>&,
                  std::uint64_t) const override {
    return group.ground_truth;
  }
};

struct EvalConfig {
  std::uint64_t seed = 0;
  int max_references = 6;        // the first N in canonical order are used
  bool drop_references = false;  // evaluate with no references at all
  bool embed_crop = false;       // embedding metrics on the mask crop instead of full images
  MetricBackendIds backends;
  std::filesystem::path results_dir;  // empty: write nothing
  std::string run_id = "run";

  void validate() const;
};

/// Completes every group (ordered by group id) and scores it against its
/// ground truth. Writes results/<run_id>/{report.csv,report.txt} and
/// <group_id>/completed.png when a results directory is set.
MetricReport run_eval(const Completer& completer, std::span<const BenchmarkGroup> groups, const EvalConfig& cfg);

/// Per-group seed derived from the evaluation seed.
std::uint64_t group_seed(std::uint64_t seed, const std::string& group_id);

struct AblationColumn {
  double ratio = 0.0;  // share of the random-grid mask family
  MetricReport report;
};

struct MaskRatioAblation {
  ModelConfig model;
  TrainConfig train;
  SamplerConfig sampler;
  EvalConfig eval;
  std::uint64_t model_seed = 0;
};

/// One toy model per ratio (same seeds throughout), each evaluated on the same
/// groups.
std::vector<AblationColumn> run_mask_ratio_ablation(std::span<const FigureSpec> figures,
                                                    std::span<const BenchmarkGroup> groups,
                                                    std::span<const double> ratios, const MaskRatioAblation& setup,
                                                    const ProgressFn& progress = {});

// ---- synthetic corpus ----

/// Training figures: ids fig0000.., seeds derived from `seed`.
std::vector<FigureSpec> make_figures(int count, std::uint64_t seed);
/// Benchmark groups built from figures disjoint from make_figures(.., seed).
std::vector<BenchmarkGroup> make_benchmark_groups(int count, std::uint64_t seed);

/// Writes figures.json, one directory per training pair under figures/ (PNGs
/// plus meta.json), and a benchmark under benchmark/. Deterministic per seed.
void write_dataset(const std::filesystem::path& dir, int figures, int benchmark_groups, std::uint64_t seed);
/// Reads figures.json from a dataset directory (or the file itself).
std::vector<FigureSpec> load_figures(const std::filesystem::path& dir_or_file);

/// Rows CLIP-I, DINO, DreamSim; one column per ratio.
std::string ablation_table_text(std::span<const AblationColumn> columns);
std::string ablation_table_csv(std::span<const AblationColumn> columns);

}  // namespace refcomp
