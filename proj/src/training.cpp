#include "refcomp/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

#include "refcomp/checkpoint.hpp"

namespace refcomp {

using nn::Graph;
using nn::Mat;
using nn::Var;

void TrainConfig::validate() const {
  auto fail = [](const std::string& why) { throw ConfigError("train config: " + why); };
  if (!(learning_rate >= 0.0)) fail("learning_rate must be nonnegative");
  if (batch_size < 1) fail("batch_size must be positive");
  if (iterations < 0) fail("iterations must be nonnegative");
  if (!(p_drop_all >= 0.0 && p_drop_all <= 1.0) || !(p_drop_each >= 0.0 && p_drop_each <= 1.0))
    fail("drop probabilities must lie in [0, 1]");
  if (checkpoint_every < 0) fail("checkpoint_every must be nonnegative");
  if (!(grad_clip >= 0.0)) fail("grad_clip must be nonnegative");
  if (max_references < 1 || max_references > kPartCount) fail("max_references must lie in [1, 6]");
  mask.validate();
}

ReferenceDrop drop_references(std::span<const ReferencePart> refs, Rng& rng, double p_all, double p_each) {
  if (!(p_all >= 0.0 && p_all <= 1.0) || !(p_each >= 0.0 && p_each <= 1.0))
    throw InvalidArgument("drop probabilities must lie in [0, 1]");
  ReferenceDrop out;
  if (bernoulli(rng, p_all)) {
    out.all_dropped = true;
    return out;
  }
  for (const auto& r : refs)
    if (!bernoulli(rng, p_each)) out.references.push_back(r);
  return out;
}

namespace {

struct SampleTensors {
  Mat x0, masked;
  Mask lmask;
  Mat lmask_col;
};

SampleTensors prepare(const Denoiser& model, const TrainingSample& s) {
  const auto& mc = model.config();
  SampleTensors t;
  t.x0 = to_model_latent(s.target, mc.latent_factor);
  t.masked = to_model_latent(s.occluded_input, mc.latent_factor);
  t.lmask = latent_source_mask(s.source_mask, mc.latent_factor);
  t.lmask_col = mask_to_latent(t.lmask).values;
  return t;
}

Var denoise_loss(Graph& g, const Denoiser& model, const SampleTensors& st, const GraphConditioning& cond, int t,
                 const Mat& eps, const NoiseSchedule& schedule, bool mask_weighted) {
  const Mat noisy = q_sample(st.x0, t, eps, schedule);
  Var pred = model.complete_graph(g, g.constant(noisy), g.constant(st.lmask_col), g.constant(st.masked), t, cond);
  if (!mask_weighted) return nn::mse(pred, g.constant(eps));
  const double cells = st.lmask_col.sum();
  if (cells == 0.0) throw InvalidArgument("mask-weighted loss needs a nonempty mask");
  Mat weight = st.lmask_col.replicate(1, eps.cols());
  Var diff = nn::mul(nn::sub(pred, g.constant(eps)), g.constant(std::move(weight)));
  return nn::scale(nn::sum(nn::mul(diff, diff)), 1.0 / (cells * static_cast<double>(eps.cols())));
}

std::optional<std::string> prompt_of(const TrainingSample& s) {
  if (s.prompt.empty()) return std::nullopt;
  return s.prompt;
}

}  // namespace

Trainer::Trainer(Denoiser& model, TrainConfig cfg, NoiseSchedule schedule)
    : model_(model),
      cfg_(std::move(cfg)),
      schedule_(std::move(schedule)),
      adam_(model.params(), nn::AdamConfig{cfg_.learning_rate}) {
  cfg_.validate();
}

StepResult Trainer::step(std::span<const TrainingSample> batch, Rng& rng) {
  if (batch.empty()) throw InvalidArgument("empty batch");
  auto& params = model_.params();
  std::vector<Mat> grads(static_cast<size_t>(params.size()));
  const double inv = 1.0 / static_cast<double>(batch.size());
  double loss_sum = 0.0;
  for (const auto& sample : batch) {
    const auto drop = drop_references(sample.references, rng, cfg_.p_drop_all, cfg_.p_drop_each);
    const auto prompt = drop.all_dropped ? std::nullopt : prompt_of(sample);
    const int t = uniform_int(rng, 0, schedule_.T - 1);
    const Mat eps = standard_normal(model_.config().latent_size() * model_.config().latent_size(),
                                    model_.config().latent_channels(), rng);
    const auto st = prepare(model_, sample);

    Graph g(true);
    const auto cond = model_.condition(g, drop.references, prompt);
    Var loss = denoise_loss(g, model_, st, cond, t, eps, schedule_, cfg_.mask_weighted_loss);
    const double value = loss.value()(0, 0);
    if (!std::isfinite(value))
      throw std::runtime_error(fmt::format("non-finite loss {} at optimizer step {} (timestep {}, {} references)",
                                           value, adam_.steps() + 1, t, drop.references.size()));
    loss_sum += value;
    g.backward(loss, inv);
    for (const auto& [id, grad] : g.param_grads()) {
      auto& acc = grads[static_cast<size_t>(id)];
      if (acc.size() == 0)
        acc = *grad;
      else
        acc += *grad;
    }
  }

  double sq = 0.0;
  for (const auto& gm : grads) sq += gm.squaredNorm();
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw std::runtime_error(fmt::format("non-finite gradient at step {}", adam_.steps() + 1));
  if (cfg_.grad_clip > 0.0 && norm > cfg_.grad_clip)
    for (auto& gm : grads) gm *= cfg_.grad_clip / norm;
  adam_.step(params, grads);
  return {loss_sum * inv, norm};
}

double sample_loss(const Denoiser& model, const TrainingSample& sample, int t, const Mat& eps,
                   const NoiseSchedule& schedule, bool mask_weighted) {
  Graph g(false);
  const auto st = prepare(model, sample);
  const auto cond = model.condition(g, sample.references, prompt_of(sample));
  return denoise_loss(g, model, st, cond, t, eps, schedule, mask_weighted).value()(0, 0);
}

std::vector<TrainingSample> draw_batch(std::span<const FigureSpec> figures, const TrainConfig& cfg, long step) {
  if (figures.empty()) throw InvalidArgument("training needs at least one figure");
  Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(2 * step)));
  std::vector<TrainingSample> batch;
  for (int i = 0; i < cfg.batch_size; ++i) {
    const auto& spec = figures[static_cast<size_t>(uniform_int(rng, 0, static_cast<int>(figures.size()) - 1))];
    auto s = build_training_pair(spec, rng, cfg.mask, kImageSize);
    if (static_cast<int>(s.references.size()) > cfg.max_references) {
      std::shuffle(s.references.begin(), s.references.end(), rng);
      s.references.resize(static_cast<size_t>(cfg.max_references));
      std::sort(s.references.begin(), s.references.end(), [](const auto& a, const auto& b) { return a.label < b.label; });
    }
    batch.push_back(std::move(s));
  }
  return batch;
}

namespace {

std::filesystem::path intermediate_path(const std::filesystem::path& final_path, long step) {
  auto p = final_path;
  p.replace_filename(final_path.stem().string() + ".step" + std::to_string(step) + final_path.extension().string());
  return p;
}

}  // namespace

TrainResult train_loop(Denoiser& model, std::span<const FigureSpec> figures, const TrainConfig& cfg,
                       const TrainPaths& paths, const ProgressFn& progress) {
  cfg.validate();
  if (figures.empty()) throw InvalidArgument("training needs at least one figure");
  model.set_reference_trainable(model.config().train_reference_encoder);
  Trainer trainer(model, cfg);
  TrainResult result;

  std::ofstream csv;
  if (!paths.loss_csv.empty()) {
    if (paths.loss_csv.has_parent_path()) std::filesystem::create_directories(paths.loss_csv.parent_path());
    csv.open(paths.loss_csv);
    if (!csv) throw IoError("cannot write " + paths.loss_csv.string());
    csv << "step,loss\n";
  }
  auto checkpoint = [&](const std::filesystem::path& p, long step) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    save_checkpoint(model, p, {{"step", step}, {"seed", cfg.seed}});
  };

  for (long step = 0; step < cfg.iterations; ++step) {
    const auto batch = draw_batch(figures, cfg, step);
    Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(2 * step + 1)));
    const auto r = trainer.step(batch, rng);
    result.losses.push_back(r.loss);
    if (csv) csv << (step + 1) << ',' << fmt::format("{:.9g}", r.loss) << '\n';
    if (progress) progress(step + 1, r.loss);
    if (!paths.checkpoint.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < cfg.iterations)
      checkpoint(intermediate_path(paths.checkpoint, step + 1), step + 1);
  }
  if (csv) {
    csv.flush();
    if (!csv) throw IoError("failed writing " + paths.loss_csv.string());
  }
  if (!paths.checkpoint.empty()) checkpoint(paths.checkpoint, cfg.iterations);
  return result;
}

}  // namespace refcomp
