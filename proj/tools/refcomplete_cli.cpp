// refcomplete: dataset generation, training, completion, evaluation,
// ablations and the HTTP service behind one binary.

#include <csignal>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "refcomp/benchmark.hpp"
#include "refcomp/checkpoint.hpp"
#include "refcomp/config.hpp"
#include "refcomp/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace refcomp;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitIo = 2;

/// Config keys as flags plus --config and --set, shared by every subcommand.
struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON config file (flat or nested keys)");
    app->add_option("--set", sets, "override a config key: key=value (repeatable)");
    for (const auto& key : config_keys()) {
      RunConfig defaults;
      options[key.name] = app->add_option("--" + key.name, values[key.name], key.help)
                              ->default_str(format_config_value(defaults, key.name))
                              ->group("Config keys");
    }
  }

  RunConfig resolve() const {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config_file(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      set_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
    }
    for (const auto& [name, opt] : options)
      if (opt->count() > 0) set_config_value(cfg, name, values.at(name));
    cfg.validate();
    return cfg;
  }
};

void write_run_json(const fs::path& dir, const std::string& command, const RunConfig& cfg, const json& inputs) {
  const json run{{"command", command}, {"config", config_to_json(cfg)}, {"inputs", inputs}};
  const std::string text = run.dump(2) + "\n";
  fs::create_directories(dir.empty() ? fs::path(".") : dir);
  write_file_atomic(dir / "run.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

fs::path dir_of(const fs::path& file) { return file.has_parent_path() ? file.parent_path() : fs::path("."); }

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::string_view rest = text;
  while (!rest.empty()) {
    const auto comma = rest.find(',');
    const std::string item(rest.substr(0, comma));
    try {
      size_t used = 0;
      const double pct = std::stod(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(pct / 100.0);
    } catch (const std::exception&) {
      throw ConfigError("--ratios: '" + item + "' is not a percentage");
    }
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  if (out.empty()) throw ConfigError("--ratios is empty");
  return out;
}

/// label=image.png:mask.png
ReferencePart parse_reference(const std::string& spec) {
  const auto eq = spec.find('=');
  const auto colon = spec.rfind(':');
  if (eq == std::string::npos || colon == std::string::npos || colon < eq)
    throw ConfigError("--ref expects label=image.png:mask.png, got '" + spec + "'");
  ReferencePart r;
  r.label = parse_part(spec.substr(0, eq));
  r.image = read_png_raster(spec.substr(eq + 1, colon - eq - 1));
  r.mask = read_png_mask(spec.substr(colon + 1));
  return r;
}

void progress_line(long step, double loss, long total) {
  if (step == 1 || step % 50 == 0 || step == total) fmt::print(stderr, "step {}/{} loss {:.6f}\n", step, total, loss);
}

Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reference-guided human image completion: data, training, inference, evaluation, serving."};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate synthetic training figures and a benchmark");
  int gen_figures = 200, gen_groups = 20;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  gen->add_option("--figures", gen_figures, "number of training figures")->capture_default_str();
  gen->add_option("--benchmark-groups", gen_groups, "number of held-out benchmark groups")->capture_default_str();
  gen->add_option("--seed", gen_seed, "generation seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model on generated figures");
  ConfigFlags train_flags;
  train_flags.attach(train);
  std::string train_data, train_out, train_loss_csv, train_init;
  std::uint64_t train_model_seed = 0;
  train->add_option("--data", train_data, "dataset directory from gen-data")->required();
  train->add_option("--out", train_out, "final checkpoint path")->required();
  train->add_option("--loss-csv", train_loss_csv, "loss log (default: next to the checkpoint)");
  train->add_option("--model-seed", train_model_seed, "weight initialization seed")->capture_default_str();
  train->add_option("--init", train_init, "start from this checkpoint instead of a fresh model");

  // complete
  auto* comp = app.add_subcommand("complete", "complete one image");
  ConfigFlags comp_flags;
  comp_flags.attach(comp);
  std::string comp_ckpt, comp_source, comp_mask, comp_out;
  std::vector<std::string> comp_refs;
  std::optional<std::string> comp_prompt;
  std::uint64_t comp_seed = 0;
  std::optional<int> comp_steps;
  std::optional<double> comp_guidance;
  comp->add_option("--ckpt", comp_ckpt, "checkpoint")->required();
  comp->add_option("--source", comp_source, "source image PNG")->required();
  comp->add_option("--mask", comp_mask, "source mask PNG (white = fill)")->required();
  comp->add_option("--ref", comp_refs, "reference: label=image.png:mask.png (repeatable)");
  comp->add_option("--prompt", comp_prompt, "text prompt");
  comp->add_option("--seed", comp_seed, "sampling seed")->capture_default_str();
  comp->add_option("--steps", comp_steps, "DDIM steps (default 50)");
  comp->add_option("--guidance", comp_guidance, "guidance scale (default 7.5)");
  comp->add_option("--out", comp_out, "output PNG")->required();

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "evaluate a checkpoint on a benchmark");
  ConfigFlags eval_flags;
  eval_flags.attach(eval);
  std::string eval_ckpt, eval_bench, eval_report;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint, or oracle:identity")->required();
  eval->add_option("--benchmark", eval_bench, "benchmark directory or manifest")->required();
  eval->add_option("--report", eval_report, "results directory")->required();

  // ablate-mask-ratio
  auto* abl = app.add_subcommand("ablate-mask-ratio", "train and evaluate one model per mask-family ratio");
  ConfigFlags abl_flags;
  abl_flags.attach(abl);
  std::string abl_ratios = "0,25,50,75,100", abl_data, abl_bench, abl_out;
  std::uint64_t abl_model_seed = 0;
  abl->add_option("--ratios", abl_ratios, "random-grid share in percent, comma separated")->capture_default_str();
  abl->add_option("--data", abl_data, "dataset directory from gen-data")->required();
  abl->add_option("--benchmark", abl_bench, "benchmark directory (default: <data>/benchmark)");
  abl->add_option("--out", abl_out, "output directory")->required();
  abl->add_option("--model-seed", abl_model_seed, "weight initialization seed")->capture_default_str();

  // serve
  auto* serve = app.add_subcommand("serve", "run the HTTP service");
  std::string serve_ckpt, serve_bench, serve_host = "0.0.0.0";
  std::optional<int> serve_port, serve_depth;
  serve->add_option("--ckpt", serve_ckpt, "checkpoint (env REFCOMPLETE_CHECKPOINT)");
  serve->add_option("--benchmark", serve_bench, "benchmark directory (env REFCOMPLETE_BENCHMARK_DIR)");
  serve->add_option("--port", serve_port, "port (env REFCOMPLETE_PORT, default 8080)");
  serve->add_option("--queue-depth", serve_depth, "inference queue depth (env REFCOMPLETE_QUEUE_DEPTH, default 4)");
  serve->add_option("--host", serve_host, "bind address")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*gen) {
      if (gen_figures < 1) throw InvalidArgument("figures must be ≥1");
      if (gen_groups < 1) throw InvalidArgument("benchmark groups must be ≥1");
      write_dataset(gen_out, gen_figures, gen_groups, gen_seed);
      RunConfig cfg;
      write_run_json(gen_out, "gen-data", cfg,
                     {{"figures", gen_figures}, {"benchmark_groups", gen_groups}, {"seed", gen_seed}});
      fmt::print("wrote {} training pairs and {} benchmark groups to {}\n", gen_figures, gen_groups, gen_out);
    } else if (*train) {
      const RunConfig cfg = train_flags.resolve();
      const auto figures = load_figures(train_data);
      std::unique_ptr<Denoiser> model;
      if (train_init.empty()) {
        model = std::make_unique<Denoiser>(cfg.model, train_model_seed);
      } else {
        model = std::move(load_checkpoint(train_init).model);
        if (!(model->config() == cfg.model)) throw ConfigError("--init checkpoint architecture differs from the config");
      }
      const fs::path out = train_out;
      const fs::path csv = train_loss_csv.empty() ? dir_of(out) / (out.stem().string() + ".loss.csv") : fs::path(train_loss_csv);
      write_run_json(dir_of(out), "train", cfg,
                     {{"data", train_data}, {"out", train_out}, {"model_seed", train_model_seed}, {"init", train_init}});
      const long total = cfg.train.iterations;
      train_loop(*model, figures, cfg.train, {out, csv}, [total](long s, double l) { progress_line(s, l, total); });
      fmt::print("checkpoint {}\nloss log {}\n", out.string(), csv.string());
    } else if (*comp) {
      RunConfig cfg = comp_flags.resolve();
      if (comp_steps) cfg.sampler.steps = *comp_steps;
      if (comp_guidance) cfg.sampler.guidance_scale = *comp_guidance;
      auto loaded = load_checkpoint(comp_ckpt);
      cfg.model = loaded.model->config();
      cfg.validate();
      const Raster source = read_png_raster(comp_source);
      const Mask mask = read_png_mask(comp_mask);
      std::vector<ReferencePart> refs;
      for (const auto& r : comp_refs) refs.push_back(parse_reference(r));
      const auto cache = loaded.model->reference_encode(refs, comp_prompt);
      const Raster out = sample_completion(*loaded.model, cache, source, mask, cfg.sampler, comp_seed, make_schedule());
      write_png(comp_out, out);
      write_run_json(dir_of(comp_out), "complete", cfg,
                     {{"ckpt", comp_ckpt},
                      {"source", comp_source},
                      {"mask", comp_mask},
                      {"references", comp_refs},
                      {"prompt", comp_prompt ? json(*comp_prompt) : json(nullptr)},
                      {"seed", comp_seed},
                      {"out", comp_out}});
      fmt::print("wrote {} (steps {}, guidance {})\n", comp_out, cfg.sampler.steps, cfg.sampler.guidance_scale);
    } else if (*eval) {
      RunConfig cfg = eval_flags.resolve();
      const auto groups = load_benchmark(eval_bench);
      std::unique_ptr<Completer> completer;
      std::unique_ptr<Denoiser> model;
      if (eval_ckpt == "oracle:identity") {
        completer = std::make_unique<IdentityOracle>();
      } else {
        model = std::move(load_checkpoint(eval_ckpt).model);
        cfg.model = model->config();
        completer = std::make_unique<ModelCompleter>(*model, cfg.sampler);
      }
      cfg.eval.results_dir = eval_report;
      const auto report = run_eval(*completer, groups, cfg.eval);
      write_run_json(fs::path(eval_report) / cfg.eval.run_id, "evaluate", cfg,
                     {{"ckpt", eval_ckpt}, {"benchmark", eval_bench}, {"report", eval_report}});
      fmt::print("{}", report.to_text());
    } else if (*abl) {
      const RunConfig cfg = abl_flags.resolve();
      const auto ratios = parse_ratios(abl_ratios);
      const auto figures = load_figures(abl_data);
      const auto groups = load_benchmark(abl_bench.empty() ? fs::path(abl_data) / "benchmark" : fs::path(abl_bench));
      MaskRatioAblation setup{cfg.model, cfg.train, cfg.sampler, cfg.eval, abl_model_seed};
      setup.eval.results_dir = fs::path(abl_out) / "results";
      const long total = cfg.train.iterations;
      const auto columns = run_mask_ratio_ablation(figures, groups, ratios, setup,
                                                   [total](long s, double l) { progress_line(s, l, total); });
      const auto text = ablation_table_text(columns), csv = ablation_table_csv(columns);
      fs::create_directories(abl_out);
      write_file_atomic(fs::path(abl_out) / "ablation.txt",
                        std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
      write_file_atomic(fs::path(abl_out) / "ablation.csv",
                        std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
      write_run_json(abl_out, "ablate-mask-ratio", cfg,
                     {{"ratios", abl_ratios}, {"data", abl_data}, {"model_seed", abl_model_seed}});
      fmt::print("{}", text);
    } else if (*serve) {
      ServiceConfig sc = ServiceConfig::from_env(ServiceConfig{});
      if (!serve_ckpt.empty()) sc.checkpoint = serve_ckpt;
      if (!serve_bench.empty()) sc.benchmark_dir = serve_bench;
      if (serve_port) sc.port = *serve_port;
      if (serve_depth) sc.queue_depth = *serve_depth;
      sc.host = serve_host;
      if (sc.queue_depth < 1) throw ConfigError("queue depth must be positive");
      Service service(sc);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      RunConfig cfg;
      write_run_json(".", "serve", cfg,
                     {{"ckpt", sc.checkpoint.string()},
                      {"benchmark", sc.benchmark_dir.string()},
                      {"port", sc.port},
                      {"queue_depth", sc.queue_depth}});
      fmt::print(stderr, "listening on {}:{}\n", sc.host, sc.port);
      if (!service.listen()) throw IoError(fmt::format("cannot listen on {}:{}", sc.host, sc.port));
      g_service = nullptr;
    }
  } catch (const IoError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitIo;
  } catch (const fs::filesystem_error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitIo;
  } catch (const ConfigError& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitValidation;
  } catch (const std::invalid_argument& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kExitValidation;
  }
  return kExitOk;
}
