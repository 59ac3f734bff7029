#include "refcomp/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "refcomp/masks.hpp"

namespace refcomp {

using nn::Mat;

double NoiseSchedule::alpha_bar(int t) const {
  if (t == -1) return 1.0;
  if (t < 0 || t >= T) throw InvalidArgument("timestep " + std::to_string(t) + " outside [0, " + std::to_string(T) + ")");
  return alphas_cumprod[static_cast<size_t>(t)];
}

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw InvalidArgument("schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
    throw InvalidArgument("betas must satisfy 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.betas.resize(static_cast<size_t>(T));
  s.alphas_cumprod.resize(static_cast<size_t>(T));
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    const double beta = T == 1 ? beta_start : beta_start + (beta_end - beta_start) * t / (T - 1);
    s.betas[static_cast<size_t>(t)] = beta;
    prod *= 1.0 - beta;
    s.alphas_cumprod[static_cast<size_t>(t)] = prod;
  }
  return s;
}

void SamplerConfig::validate(const NoiseSchedule& s) const {
  if (steps < 1 || steps > s.T) throw InvalidArgument("sampler steps must lie in [1, " + std::to_string(s.T) + "]");
  if (!(guidance_scale >= 0.0)) throw InvalidArgument("guidance scale must be nonnegative");
  if (!(eta >= 0.0)) throw InvalidArgument("eta must be nonnegative");
}

Mat q_sample(const Mat& x0, int t, const Mat& eps, const NoiseSchedule& s) {
  if (t < 0 || t >= s.T) throw InvalidArgument("q_sample: timestep out of range");
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) throw InvalidArgument("q_sample: shape mismatch");
  const double ab = s.alphas_cumprod[static_cast<size_t>(t)];
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

LatentGrid q_sample(const LatentGrid& x0, int t, const Mat& eps, const NoiseSchedule& s) {
  return {x0.h, x0.w, x0.channels, q_sample(x0.values, t, eps, s)};
}

double training_loss(const Mat& predicted, const Mat& truth, const Mask* latent_mask) {
  if (predicted.rows() != truth.rows() || predicted.cols() != truth.cols())
    throw InvalidArgument("training_loss: shape mismatch");
  if (!latent_mask) return (predicted - truth).squaredNorm() / static_cast<double>(predicted.size());
  if (static_cast<Eigen::Index>(latent_mask->bits.size()) != predicted.rows())
    throw InvalidArgument("training_loss: mask does not match the latent grid");
  double acc = 0.0;
  long n = 0;
  for (Eigen::Index r = 0; r < predicted.rows(); ++r) {
    if (!latent_mask->bits[static_cast<size_t>(r)]) continue;
    acc += (predicted.row(r) - truth.row(r)).squaredNorm();
    n += predicted.cols();
  }
  if (n == 0) throw InvalidArgument("training_loss: empty mask");
  return acc / static_cast<double>(n);
}

Mat ddim_step(const Mat& x_t, const Mat& eps_pred, int t, int t_prev, const NoiseSchedule& s, double eta, Rng* rng,
              bool clip_x0) {
  if (!(t > t_prev && t_prev >= -1)) throw InvalidArgument("ddim_step: need t > t_prev >= -1");
  if (x_t.rows() != eps_pred.rows() || x_t.cols() != eps_pred.cols()) throw InvalidArgument("ddim_step: shape mismatch");
  const double ab = s.alpha_bar(t);
  const double ab_prev = s.alpha_bar(t_prev);
  Mat x0 = (x_t - std::sqrt(1.0 - ab) * eps_pred) / std::sqrt(ab);
  if (clip_x0) x0 = x0.cwiseMax(-1.0).cwiseMin(1.0);
  if (eta == 0.0) return std::sqrt(ab_prev) * x0 + std::sqrt(1.0 - ab_prev) * eps_pred;
  if (!rng) throw InvalidArgument("ddim_step: eta > 0 needs a random stream");
  const double sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev));
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
  return std::sqrt(ab_prev) * x0 + dir * eps_pred + sigma * standard_normal(x_t.rows(), x_t.cols(), *rng);
}

Mat cfg_combine(const Mat& eps_uncond, const Mat& eps_cond, double scale) {
  if (eps_uncond.rows() != eps_cond.rows() || eps_uncond.cols() != eps_cond.cols())
    throw InvalidArgument("cfg_combine: shape mismatch");
  if (scale == 0.0) return eps_uncond;
  if (scale == 1.0) return eps_cond;
  return eps_uncond + scale * (eps_cond - eps_uncond);
}

std::vector<int> ddim_timesteps(int T, int steps) {
  if (steps < 1 || steps > T) throw InvalidArgument("ddim_timesteps: steps must lie in [1, T]");
  std::vector<int> ts;
  for (int i = 0; i < steps; ++i)
    ts.push_back(static_cast<int>(std::lround(T - static_cast<double>(i) * T / steps)) - 1);
  return ts;
}

Mat ddim_sample(const EpsFn& eps_fn, Mat x, const NoiseSchedule& s, const SamplerConfig& cfg, Rng& rng) {
  cfg.validate(s);
  const auto ts = ddim_timesteps(s.T, cfg.steps);
  for (size_t i = 0; i < ts.size(); ++i) {
    const int t_prev = i + 1 < ts.size() ? ts[i + 1] : -1;
    x = ddim_step(x, eps_fn(x, ts[i]), ts[i], t_prev, s, cfg.eta, &rng, cfg.clip_x0);
  }
  return x;
}

Mat to_model_latent(const Raster& image, int factor) {
  return (encode_image_to_latent(image, factor).values.array() * 2.0 - 1.0).matrix();
}

Raster from_model_latent(const Mat& latent, int latent_size, int factor) {
  LatentGrid g{latent_size, latent_size, factor * factor * 3, ((latent.array() + 1.0) * 0.5).matrix()};
  return decode_latent(g, factor);
}

Mask latent_source_mask(const Mask& pixel_mask, int factor) {
  if (pixel_mask.height % factor != 0 || pixel_mask.width % factor != 0)
    throw InvalidArgument("mask size must be divisible by the latent factor");
  const auto counts = footprint_counts(pixel_mask, factor);
  Mask m(pixel_mask.height / factor, pixel_mask.width / factor);
  for (size_t i = 0; i < counts.size(); ++i) m.bits[i] = counts[i] > 0 ? 1 : 0;
  return m;
}

Mat standard_normal(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

Raster sample_completion(const Denoiser& model, const FeatureCache& cache, const Raster& source, const Mask& mask,
                         const SamplerConfig& cfg, std::uint64_t seed, const NoiseSchedule& schedule) {
  const auto& mc = model.config();
  if (source.height != mc.image_size || source.width != mc.image_size)
    throw InvalidArgument("source is " + std::to_string(source.height) + "x" + std::to_string(source.width) +
                          ", model expects " + std::to_string(mc.image_size));
  if (mask.height != source.height || mask.width != source.width)
    throw InvalidArgument("mask and source sizes differ");
  if (mask.empty()) throw InvalidArgument("source mask is empty");
  cfg.validate(schedule);

  const int n = mc.latent_size();
  const Mask lmask = latent_source_mask(mask, mc.latent_factor);
  const LatentGrid masked{n, n, mc.latent_channels(), to_model_latent(apply_mask(source, mask, 0.0), mc.latent_factor)};
  const bool need_uncond = cfg.guidance_scale != 1.0;
  const FeatureCache uncond = need_uncond ? model.empty_cache() : FeatureCache{};

  Rng rng(seed);
  Mat x = standard_normal(n * n, mc.latent_channels(), rng);
  EpsFn eps = [&](const Mat& x_t, int t) {
    const LatentGrid noisy{n, n, mc.latent_channels(), x_t};
    Mat cond = model.complete_forward(noisy, lmask, masked, t, cache).values;
    if (!need_uncond) return cond;
    Mat un = model.complete_forward(noisy, lmask, masked, t, uncond).values;
    return cfg_combine(un, cond, cfg.guidance_scale);
  };
  x = ddim_sample(eps, std::move(x), schedule, cfg, rng);

  Raster generated = from_model_latent(x, n, mc.latent_factor);
  Raster out = source;
  for (int y = 0; y < out.height; ++y)
    for (int xx = 0; xx < out.width; ++xx)
      if (mask.at(y, xx))
        for (int c = 0; c < 3; ++c) out.at(y, xx, c) = std::clamp(generated.at(y, xx, c), 0.0, 1.0);
  return out;
}

}  // namespace refcomp
