#include <doctest.h>

#include <fstream>

#include "refcomp/benchmark.hpp"
#include "refcomp/checkpoint.hpp"
#include "refcomp/training.hpp"
#include "support.hpp"

using namespace refcomp;
using namespace refcomp::testing;

namespace {

TrainConfig quick_config() {
  TrainConfig t;
  t.batch_size = 2;
  t.iterations = 3;
  t.seed = 17;
  t.checkpoint_every = 0;
  return t;
}

bool same_weights(const Denoiser& a, const Denoiser& b) {
  for (int id = 0; id < a.params().size(); ++id)
    if (!(a.params().value(id) == b.params().value(id))) return false;
  return true;
}

}  // namespace

TEST_CASE("drop references edge probabilities") {
  Rng rng(1);
  const auto refs = random_references(4, 8, rng);
  for (int i = 0; i < 50; ++i) {
    const auto all = drop_references(refs, rng, 1.0, 0.0);
    CHECK(all.references.empty());
    CHECK(all.all_dropped);
    const auto none = drop_references(refs, rng, 0.0, 0.0);
    CHECK(!none.all_dropped);
    REQUIRE(none.references.size() == refs.size());
    for (size_t k = 0; k < refs.size(); ++k) CHECK(none.references[k].label == refs[k].label);
  }
  CHECK_THROWS_AS(drop_references(refs, rng, 1.5, 0.0), InvalidArgument);
}

TEST_CASE("drop references rates are binomially consistent") {
  Rng rng(2);
  const auto refs = random_references(6, 8, rng);
  const int n = 10000;
  int all = 0;
  long kept = 0;
  for (int i = 0; i < n; ++i) {
    const auto d = drop_references(refs, rng, 0.2, 0.2);
    all += d.all_dropped;
    kept += static_cast<long>(d.references.size());
  }
  // Two-sided 1% bands: z = 2.576.
  const double sd_all = std::sqrt(0.2 * 0.8 / n);
  CHECK(std::abs(all / static_cast<double>(n) - 0.2) <= 2.576 * sd_all);
  const double rate = kept / (6.0 * n);
  CHECK(std::abs(rate - 0.64) <= 0.015);
}

TEST_CASE("train config validation") {
  TrainConfig t;
  CHECK(t.learning_rate == 1e-3);
  CHECK(t.batch_size == 8);
  CHECK(t.iterations == 2000);
  CHECK(t.p_drop_all == 0.2);
  CHECK(t.p_drop_each == 0.2);
  CHECK(t.mask.random_ratio == 0.5);
  CHECK_NOTHROW(t.validate());
  t.batch_size = 0;
  CHECK_THROWS_AS(t.validate(), ConfigError);
  t = TrainConfig{};
  t.p_drop_each = -0.1;
  CHECK_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("batches are a pure function of the step") {
  const auto figures = make_figures(5, 3);
  const TrainConfig t = quick_config();
  const auto a = draw_batch(figures, t, 4);
  const auto b = draw_batch(figures, t, 4);
  REQUIRE(a.size() == 2);
  for (size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].target == b[i].target);
    CHECK(a[i].source_mask == b[i].source_mask);
    CHECK(a[i].references.size() == b[i].references.size());
  }
  CHECK(!(draw_batch(figures, t, 5)[0].target == a[0].target && draw_batch(figures, t, 5)[0].source_mask == a[0].source_mask));
}

TEST_CASE("train step is deterministic") {
  const auto figures = make_figures(4, 4);
  const TrainConfig t = quick_config();
  const auto batch = draw_batch(figures, t, 0);
  Denoiser a(tiny_config(64), 5), b(tiny_config(64), 5);
  Trainer ta(a, t), tb(b, t);
  Rng ra(6), rb(6);
  const auto la = ta.step(batch, ra), lb = tb.step(batch, rb);
  CHECK(la.loss == lb.loss);
  CHECK(std::isfinite(la.loss));
  CHECK(same_weights(a, b));
  CHECK(ta.steps_taken() == 1);
}

TEST_CASE("zero learning rate leaves weights unchanged") {
  const auto figures = make_figures(2, 4);
  TrainConfig t = quick_config();
  t.learning_rate = 0.0;
  Denoiser model(tiny_config(64), 5);
  const Denoiser init(tiny_config(64), 5);
  Trainer tr(model, t);
  Rng rng(1);
  CHECK(std::isfinite(tr.step(draw_batch(figures, t, 0), rng).loss));
  CHECK(same_weights(model, init));
}

TEST_CASE("non-finite loss aborts the step") {
  const auto figures = make_figures(2, 4);
  const TrainConfig t = quick_config();
  Denoiser model(tiny_config(64), 5);
  model.params().value(model.params().id("comp.out.w")).setConstant(std::nan(""));
  Trainer tr(model, t);
  Rng rng(1);
  CHECK_THROWS_AS(tr.step(draw_batch(figures, t, 0), rng), std::runtime_error);
}

TEST_CASE("train loop writes the loss log and checkpoints") {
  TempDir dir;
  const auto figures = make_figures(3, 7);
  TrainConfig t = quick_config();
  t.iterations = 4;
  t.checkpoint_every = 2;
  Denoiser model(tiny_config(64), 8);
  const auto result = train_loop(model, figures, t, {dir / "model.ckpt", dir / "loss.csv"});
  CHECK(result.losses.size() == 4);
  std::ifstream csv(dir / "loss.csv");
  std::string line;
  std::getline(csv, line);
  CHECK(line == "step,loss");
  int rows = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 4);
  CHECK(std::filesystem::exists(dir / "model.ckpt"));
  CHECK(std::filesystem::exists(dir / "model.step2.ckpt"));

  Denoiser again(tiny_config(64), 8);
  train_loop(again, figures, t);
  CHECK(same_weights(model, again));
}

TEST_CASE("zero iterations keeps the initialization") {
  TempDir dir;
  TrainConfig t = quick_config();
  t.iterations = 0;
  Denoiser model(tiny_config(64), 9);
  train_loop(model, make_figures(2, 1), t, {dir / "init.ckpt", {}});
  auto loaded = load_checkpoint(dir / "init.ckpt");
  Denoiser init(tiny_config(64), 9);
  round_to_storage_precision(init);
  CHECK(same_weights(*loaded.model, init));
}

TEST_CASE("a frozen reference branch stays bit-identical") {
  ModelConfig c = tiny_config(64);
  c.train_reference_encoder = false;
  Denoiser model(c, 10);
  const Denoiser before(c, 10);
  TrainConfig t = quick_config();
  t.p_drop_all = 0.0;
  train_loop(model, make_figures(3, 2), t);
  bool comp_moved = false;
  for (int id = 0; id < model.params().size(); ++id) {
    const bool same = model.params().value(id) == before.params().value(id);
    if (model.is_reference_param(id)) CHECK(same);
    else comp_moved = comp_moved || !same;
  }
  CHECK(comp_moved);
}

TEST_CASE("sample loss is a pure evaluation") {
  Denoiser model(tiny_config(64), 11);
  const auto s = draw_batch(make_figures(1, 3), quick_config(), 0)[0];
  Rng rng(3);
  const auto eps = standard_normal(256, 48, rng);
  const auto sched = make_schedule();
  const double a = sample_loss(model, s, 400, eps, sched);
  CHECK(a == sample_loss(model, s, 400, eps, sched));
  CHECK(a > 0.0);
}
