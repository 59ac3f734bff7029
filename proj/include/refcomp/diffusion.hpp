#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "refcomp/model.hpp"

namespace refcomp {

struct NoiseSchedule {
  int T = 0;
  std::vector<double> betas;
  std::vector<double> alphas_cumprod;

  /// ᾱ_t, with t = -1 denoting the clean endpoint (ᾱ = 1).
  double alpha_bar(int t) const;
};

/// Linear betas. Throws InvalidArgument unless 0 < beta_start <= beta_end < 1.
NoiseSchedule make_schedule(int T = 1000, double beta_start = 1e-4, double beta_end = 0.02);

struct SamplerConfig {
  int steps = 50;
  double guidance_scale = 7.5;
  double eta = 0.0;
  /// Clamp the predicted clean latent to the data range before each step.
  bool clip_x0 = true;

  void validate(const NoiseSchedule& s) const;
};

nn::Mat q_sample(const nn::Mat& x0, int t, const nn::Mat& eps, const NoiseSchedule& s);
LatentGrid q_sample(const LatentGrid& x0, int t, const nn::Mat& eps, const NoiseSchedule& s);

/// Mean squared error over every latent element, or over the masked cells
/// only when `latent_mask` is given.
double training_loss(const nn::Mat& predicted, const nn::Mat& truth, const Mask* latent_mask = nullptr);

/// One DDIM update from t to t_prev (t_prev = -1 is the clean endpoint). With
/// eta > 0 an rng must be supplied.
nn::Mat ddim_step(const nn::Mat& x_t, const nn::Mat& eps_pred, int t, int t_prev, const NoiseSchedule& s,
                  double eta = 0.0, Rng* rng = nullptr, bool clip_x0 = false);

nn::Mat cfg_combine(const nn::Mat& eps_uncond, const nn::Mat& eps_cond, double scale);

/// `steps` evenly spaced timesteps, descending, starting at T-1.
std::vector<int> ddim_timesteps(int T, int steps);

using EpsFn = std::function<nn::Mat(const nn::Mat& x_t, int t)>;

/// Runs the full chain from x_T down to the clean endpoint.
nn::Mat ddim_sample(const EpsFn& eps_fn, nn::Mat x_T, const NoiseSchedule& s, const SamplerConfig& cfg, Rng& rng);

/// Pixel values in [0, 1] to the signed latent range the denoiser works in.
nn::Mat to_model_latent(const Raster& image, int factor);
Raster from_model_latent(const nn::Mat& latent, int latent_size, int factor);

/// A latent cell is masked if any pixel of its footprint is.
Mask latent_source_mask(const Mask& pixel_mask, int factor);

nn::Mat standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng);

/// Guided DDIM completion. The result equals `source` outside `mask` and
/// holds the decoded sample, clamped to [0, 1], inside it.
Raster sample_completion(const Denoiser& model, const FeatureCache& cache, const Raster& source, const Mask& mask,
                         const SamplerConfig& cfg, std::uint64_t seed, const NoiseSchedule& schedule);

}  // namespace refcomp
