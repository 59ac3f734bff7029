#include "refcomp/benchmark.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <json.hpp>

#include "refcomp/masks.hpp"

namespace refcomp {

namespace fs = std::filesystem;
using nlohmann::json;

bool valid_group_id(std::string_view id) {
  if (id.empty() || id.size() > 128) return false;
  for (char c : id)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.')) return false;
  return id != "." && id != "..";
}

void write_benchmark(const fs::path& dir, std::span<const BenchmarkGroup> groups) {
  if (groups.empty()) throw InvalidArgument("benchmark has no groups");
  json manifest;
  manifest["format"] = "refcomplete-benchmark";
  manifest["version"] = 1;
  json list = json::array();
  for (const auto& g : groups) {
    g.validate();
    if (!valid_group_id(g.group_id)) throw InvalidArgument("group id '" + g.group_id + "' is not a safe file name");
    const fs::path gdir = dir / g.group_id;
    fs::create_directories(gdir / "refs");
    write_png(gdir / "source.png", g.source);
    write_png(gdir / "mask.png", g.source_mask);
    write_png(gdir / "gt.png", g.ground_truth);
    json entry{{"group_id", g.group_id},
               {"source", g.group_id + "/source.png"},
               {"mask", g.group_id + "/mask.png"},
               {"ground_truth", g.group_id + "/gt.png"}};
    entry["prompt"] = g.prompt ? json(*g.prompt) : json(nullptr);
    json refs = json::array();
    for (const auto& r : g.references) {
      const std::string name(part_name(r.label));
      write_png(gdir / "refs" / (name + ".png"), r.image);
      write_png(gdir / "refs" / (name + "_mask.png"), r.mask);
      refs.push_back({{"label", name},
                      {"image", g.group_id + "/refs/" + name + ".png"},
                      {"mask", g.group_id + "/refs/" + name + "_mask.png"},
                      {"caption", r.caption}});
    }
    entry["references"] = refs;
    list.push_back(entry);
  }
  manifest["groups"] = list;
  const std::string text = manifest.dump(2) + "\n";
  write_file_atomic(dir / kManifestName, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<BenchmarkGroup> load_benchmark(const fs::path& manifest_or_dir) {
  const fs::path manifest_path =
      fs::is_directory(manifest_or_dir) ? manifest_or_dir / kManifestName : manifest_or_dir;
  const fs::path root = manifest_path.parent_path();
  const auto bytes = read_file(manifest_path);
  json manifest;
  try {
    manifest = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw IoError(manifest_path.string() + ": malformed manifest: " + e.what());
  }
  if (!manifest.contains("groups") || !manifest["groups"].is_array())
    throw InvalidArgument(manifest_path.string() + ": manifest lacks a groups array");
  if (manifest["groups"].empty()) throw InvalidArgument(manifest_path.string() + ": no groups");

  std::vector<BenchmarkGroup> groups;
  for (const auto& entry : manifest["groups"]) {
    const std::string id = entry.value("group_id", std::string{});
    auto fail_io = [&](const std::string& what, const fs::path& p) {
      throw IoError("group '" + id + "': " + what + " " + p.string());
    };
    auto path_of = [&](const json& obj, const char* key) {
      if (!obj.contains(key) || !obj[key].is_string())
        throw InvalidArgument("group '" + id + "': missing field '" + key + "'");
      const fs::path rel = obj[key].get<std::string>();
      if (rel.is_absolute()) throw InvalidArgument("group '" + id + "': absolute path " + rel.string());
      return root / rel;
    };
    auto raster = [&](const fs::path& p) {
      if (!fs::exists(p)) fail_io("missing file", p);
      try {
        return read_png_raster(p);
      } catch (const IoError& e) {
        throw IoError("group '" + id + "': " + e.what());
      }
    };
    auto mask = [&](const fs::path& p) {
      if (!fs::exists(p)) fail_io("missing mask file", p);
      try {
        return read_png_mask(p);
      } catch (const IoError& e) {
        throw IoError("group '" + id + "': " + e.what());
      }
    };
    if (!valid_group_id(id)) throw InvalidArgument("manifest entry with invalid group id '" + id + "'");
    BenchmarkGroup g;
    g.group_id = id;
    g.source = raster(path_of(entry, "source"));
    g.source_mask = mask(path_of(entry, "mask"));
    g.ground_truth = raster(path_of(entry, "ground_truth"));
    if (entry.contains("prompt") && entry["prompt"].is_string()) g.prompt = entry["prompt"].get<std::string>();
    if (!entry.contains("references") || !entry["references"].is_array())
      throw InvalidArgument("group '" + id + "': missing references");
    for (const auto& r : entry["references"]) {
      ReferencePart part;
      part.label = parse_part(r.value("label", std::string{}));
      part.image = raster(path_of(r, "image"));
      part.mask = mask(path_of(r, "mask"));
      part.caption = r.value("caption", std::string{});
      g.references.push_back(std::move(part));
    }
    g.validate();
    groups.push_back(std::move(g));
  }
  return groups;
}

ModelCompleter::ModelCompleter(const Denoiser& model, SamplerConfig sampler, NoiseSchedule schedule)
    : model_(model), sampler_(sampler), schedule_(std::move(schedule)) {
  sampler_.validate(schedule_);
}

Raster ModelCompleter::complete(const BenchmarkGroup& group, std::span<const ReferencePart> references,
                                const std::optional<std::string>& prompt, std::uint64_t seed) const {
  const auto cache = model_.reference_encode(references, prompt);
  return sample_completion(model_, cache, group.source, group.source_mask, sampler_, seed, schedule_);
}

void EvalConfig::validate() const {
  if (max_references < 1 || max_references > kPartCount) throw ConfigError("eval max_references must lie in [1, 6]");
  if (run_id.empty() || !valid_group_id(run_id)) throw ConfigError("eval run_id must be a safe file name");
}

std::uint64_t group_seed(std::uint64_t seed, const std::string& group_id) { return mix_seed(seed, fnv1a(group_id)); }

MetricReport run_eval(const Completer& completer, std::span<const BenchmarkGroup> groups, const EvalConfig& cfg) {
  cfg.validate();
  if (groups.empty()) throw InvalidArgument("run_eval: benchmark has no groups");
  std::vector<const BenchmarkGroup*> order;
  for (const auto& g : groups) order.push_back(&g);
  std::sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->group_id < b->group_id; });

  const auto backends = MetricBackends::create(cfg.backends);
  const fs::path out_dir = cfg.results_dir.empty() ? fs::path{} : cfg.results_dir / cfg.run_id;
  std::vector<MetricRow> rows;
  for (const auto* g : order) {
    try {
      std::vector<ReferencePart> refs;
      if (!cfg.drop_references) {
        refs = g->references;
        std::sort(refs.begin(), refs.end(), [](const auto& a, const auto& b) { return a.label < b.label; });
        if (static_cast<int>(refs.size()) > cfg.max_references) refs.resize(static_cast<size_t>(cfg.max_references));
      }
      const Raster out = completer.complete(*g, refs, g->prompt, group_seed(cfg.seed, g->group_id));
      rows.push_back(compute_metrics(g->group_id, out, g->ground_truth, g->source_mask,
                                     g->prompt ? &*g->prompt : nullptr, backends, cfg.embed_crop));
      if (!out_dir.empty()) {
        fs::create_directories(out_dir / g->group_id);
        write_png(out_dir / g->group_id / "completed.png", out);
      }
    } catch (const IoError& e) {
      throw IoError("group '" + g->group_id + "': " + e.what());
    } catch (const std::invalid_argument& e) {
      throw InvalidArgument("group '" + g->group_id + "': " + e.what());
    }
  }
  auto report = aggregate_report(std::move(rows), backends.ids());
  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    const auto csv = report.to_csv(), text = report.to_text();
    write_file_atomic(out_dir / "report.csv", std::span(reinterpret_cast<const std::uint8_t*>(csv.data()), csv.size()));
    write_file_atomic(out_dir / "report.txt",
                      std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  }
  return report;
}

std::vector<AblationColumn> run_mask_ratio_ablation(std::span<const FigureSpec> figures,
                                                    std::span<const BenchmarkGroup> groups,
                                                    std::span<const double> ratios, const MaskRatioAblation& setup,
                                                    const ProgressFn& progress) {
  if (ratios.empty()) throw InvalidArgument("mask-ratio ablation needs at least one ratio");
  for (double r : ratios)
    if (!(r >= 0.0 && r <= 1.0)) throw InvalidArgument(fmt::format("mask ratio {} outside [0, 1]", r));
  std::vector<AblationColumn> out;
  for (double r : ratios) {
    Denoiser model(setup.model, setup.model_seed);
    TrainConfig train = setup.train;
    train.mask.random_ratio = r;
    train_loop(model, figures, train, {}, progress);
    ModelCompleter completer(model, setup.sampler);
    EvalConfig eval = setup.eval;
    eval.run_id = setup.eval.run_id + fmt::format("-ratio{}", static_cast<int>(std::lround(r * 100)));
    out.push_back({r, run_eval(completer, groups, eval)});
  }
  return out;
}

std::vector<FigureSpec> make_figures(int count, std::uint64_t seed) {
  if (count < 1) throw InvalidArgument("figures must be >= 1");
  std::vector<FigureSpec> out;
  for (int i = 0; i < count; ++i)
    out.push_back(make_figure_spec(fmt::format("fig{:04d}", i), mix_seed(seed, static_cast<std::uint64_t>(i))));
  return out;
}

std::vector<BenchmarkGroup> make_benchmark_groups(int count, std::uint64_t seed) {
  if (count < 1) throw InvalidArgument("benchmark groups must be >= 1");
  const std::uint64_t stream = mix_seed(seed, 0xbe4c4a11ull);
  std::vector<BenchmarkGroup> out;
  for (int i = 0; i < count; ++i) {
    const auto s = mix_seed(stream, static_cast<std::uint64_t>(i));
    const auto spec = make_figure_spec(fmt::format("held{:04d}", i), s);
    Rng rng(mix_seed(s, 1));
    out.push_back(build_benchmark_group(spec, rng, fmt::format("group{:03d}", i)).group);
  }
  return out;
}

namespace {

json pose_json(const Pose& p) {
  return {{"shift_x", p.shift_x}, {"shift_y", p.shift_y}, {"arm_left", p.arm_left},
          {"arm_right", p.arm_right}, {"leg_spread", p.leg_spread}, {"scale", p.scale}};
}

}  // namespace

void write_dataset(const fs::path& dir, int figures, int benchmark_groups, std::uint64_t seed) {
  const auto specs = make_figures(figures, seed);
  const auto groups = make_benchmark_groups(benchmark_groups, seed);
  json list = json::array();
  for (size_t i = 0; i < specs.size(); ++i) {
    const auto& spec = specs[i];
    list.push_back({{"figure_id", spec.figure_id}, {"seed", spec.seed}});
    Rng rng(mix_seed(spec.seed, 2));
    const auto pair = build_training_pair(spec, rng, MaskSpec{});
    const fs::path pdir = dir / "figures" / spec.figure_id;
    fs::create_directories(pdir / "refs");
    write_png(pdir / "target.png", pair.target);
    write_png(pdir / "occluded.png", pair.occluded_input);
    write_png(pdir / "mask.png", pair.source_mask);
    for (const auto& r : pair.references) {
      const std::string name(part_name(r.label));
      write_png(pdir / "refs" / (name + ".png"), r.image);
      write_png(pdir / "refs" / (name + "_mask.png"), r.mask);
    }
    const auto& m = pair.meta;
    const json meta{{"figure_id", m.figure_id},
                    {"seed", m.figure_seed},
                    {"render_seed", m.render_seed},
                    {"pose", pose_json(m.pose)},
                    {"reference_pose", pose_json(m.reference_pose)},
                    {"background", m.background},
                    {"reference_background", m.reference_background},
                    {"caption", m.caption},
                    {"mask_branch", pair.mask_branch == MaskBranch::grid ? "grid" : "body_shape"}};
    const std::string meta_text = meta.dump(2) + "\n";
    write_file(pdir / "meta.json",
               std::span(reinterpret_cast<const std::uint8_t*>(meta_text.data()), meta_text.size()));
  }
  json manifest{{"format", "refcomplete-figures"},
                {"version", 1},
                {"seed", seed},
                {"pairs", specs.size()},
                {"benchmark_groups", groups.size()},
                {"figures", list}};
  const std::string text = manifest.dump(2) + "\n";
  fs::create_directories(dir);
  write_file_atomic(dir / "figures.json", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  write_benchmark(dir / "benchmark", groups);
}

std::vector<FigureSpec> load_figures(const fs::path& dir_or_file) {
  const fs::path p = fs::is_directory(dir_or_file) ? dir_or_file / "figures.json" : dir_or_file;
  const auto bytes = read_file(p);
  try {
    const json j = json::parse(bytes.begin(), bytes.end());
    std::vector<FigureSpec> out;
    for (const auto& f : j.at("figures"))
      out.push_back(make_figure_spec(f.at("figure_id").get<std::string>(), f.at("seed").get<std::uint64_t>()));
    if (out.empty()) throw InvalidArgument(p.string() + ": no figures");
    return out;
  } catch (const json::exception& e) {
    throw IoError(p.string() + ": " + e.what());
  }
}

namespace {

struct AblationRow {
  const char* title;
  double MetricRow::*field;
};

constexpr AblationRow kAblationRows[] = {
    {"CLIP-I", &MetricRow::clip_i}, {"DINO", &MetricRow::dino}, {"DreamSim", &MetricRow::dreamsim}};

std::string ratio_label(double r) { return fmt::format("{}%", static_cast<int>(std::lround(r * 100))); }

}  // namespace

std::string ablation_table_text(std::span<const AblationColumn> columns) {
  std::string out = fmt::format("{:<10}", "metric");
  for (const auto& c : columns) out += fmt::format("  {:>9}", ratio_label(c.ratio));
  out += '\n';
  for (const auto& row : kAblationRows) {
    out += fmt::format("{:<10}", row.title);
    for (const auto& c : columns) out += fmt::format("  {:>9.4f}", c.report.mean.*row.field);
    out += '\n';
  }
  return out;
}

std::string ablation_table_csv(std::span<const AblationColumn> columns) {
  std::string out = "metric";
  for (const auto& c : columns) out += "," + ratio_label(c.ratio);
  out += '\n';
  for (const auto& row : kAblationRows) {
    out += row.title;
    for (const auto& c : columns) out += fmt::format(",{:.10g}", c.report.mean.*row.field);
    out += '\n';
  }
  return out;
}

}  // namespace refcomp
