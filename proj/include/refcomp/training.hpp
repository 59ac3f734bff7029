#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "refcomp/diffusion.hpp"
#include "refcomp/masks.hpp"
#include "refcomp/synth.hpp"

namespace refcomp {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 8;
  int iterations = 2000;
  double p_drop_all = 0.2;
  double p_drop_each = 0.2;
  MaskSpec mask;
  std::uint64_t seed = 0;
  int checkpoint_every = 500;  // 0 writes only the final checkpoint
  double grad_clip = 1.0;      // global gradient norm; 0 disables
  bool mask_weighted_loss = false;
  int max_references = 6;  // per training sample, chosen at random when exceeded

  void validate() const;
};

struct ReferenceDrop {
  std::vector<ReferencePart> references;
  bool all_dropped = false;
};

/// With probability p_all every reference goes (and the caller drops the
/// prompt too); otherwise each reference is removed independently with
/// probability p_each.
ReferenceDrop drop_references(std::span<const ReferencePart> refs, Rng& rng, double p_all, double p_each);

struct StepResult {
  double loss = 0.0;
  double grad_norm = 0.0;
};

class Trainer {
 public:
  Trainer(Denoiser& model, TrainConfig cfg, NoiseSchedule schedule = make_schedule());

  /// One optimizer update on the mean loss of the batch. Draws timesteps,
  /// noise and reference drops from `rng`. Throws std::runtime_error on a
  /// non-finite loss.
  StepResult step(std::span<const TrainingSample> batch, Rng& rng);

  const TrainConfig& config() const { return cfg_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  long steps_taken() const { return adam_.steps(); }

 private:
  Denoiser& model_;
  TrainConfig cfg_;
  NoiseSchedule schedule_;
  nn::Adam adam_;
};

/// Denoising loss of one sample at a fixed timestep and noise, with the
/// sample's own references and prompt. No parameter update.
double sample_loss(const Denoiser& model, const TrainingSample& sample, int t, const nn::Mat& eps,
                   const NoiseSchedule& schedule, bool mask_weighted = false);

/// Fresh training pairs for step `step`; a pure function of (figures, cfg, step).
std::vector<TrainingSample> draw_batch(std::span<const FigureSpec> figures, const TrainConfig& cfg, long step);

struct TrainPaths {
  std::filesystem::path checkpoint;  // final weights; intermediate ones get a .step<N> infix
  std::filesystem::path loss_csv;    // optional
};

struct TrainResult {
  std::vector<double> losses;
};

using ProgressFn = std::function<void(long step, double loss)>;

/// Runs cfg.iterations steps over pairs generated on the fly from `figures`.
/// Reproducible from (figures, cfg, model initialization).
TrainResult train_loop(Denoiser& model, std::span<const FigureSpec> figures, const TrainConfig& cfg,
                       const TrainPaths& paths = {}, const ProgressFn& progress = {});

}  // namespace refcomp
