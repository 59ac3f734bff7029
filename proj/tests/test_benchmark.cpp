#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

#include "refcomp/benchmark.hpp"
#include "support.hpp"

using namespace refcomp;
using namespace refcomp::testing;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) {
      std::ifstream in(e.path(), std::ios::binary);
      std::ostringstream ss;
      ss << in.rdbuf();
      out[fs::relative(e.path(), dir).string()] = ss.str();
    }
  return out;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("generated benchmark round-trips through the loader") {
  TempDir dir;
  const auto groups = make_benchmark_groups(20, 1);
  write_benchmark(dir.path(), groups);
  const auto loaded = load_benchmark(dir.path());
  REQUIRE(loaded.size() == 20);
  for (size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].group_id == groups[i].group_id);
    CHECK(loaded[i].source_mask == groups[i].source_mask);
    CHECK(loaded[i].references.size() == groups[i].references.size());
    CHECK(loaded[i].prompt == groups[i].prompt);
    CHECK_NOTHROW(loaded[i].validate());
  }
  TempDir again;
  write_benchmark(again.path(), loaded);
  CHECK(snapshot(dir.path()) == snapshot(again.path()));
  CHECK(load_benchmark(dir / kManifestName).size() == 20);
}

TEST_CASE("loader errors name the group") {
  TempDir dir;
  write_benchmark(dir.path(), make_benchmark_groups(3, 2));
  fs::remove(dir / "group001/mask.png");
  try {
    load_benchmark(dir.path());
    FAIL("expected a load error");
  } catch (const std::exception& e) {
    const std::string what = e.what();
    CHECK(what.find("group001") != std::string::npos);
    CHECK(what.find("mask.png") != std::string::npos);
  }

  TempDir empty;
  std::ofstream(empty / kManifestName) << R"({"format": "refcomplete-benchmark", "version": 1, "groups": []})";
  try {
    load_benchmark(empty.path());
    FAIL("expected a load error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("no groups") != std::string::npos);
  }
  CHECK_THROWS(load_benchmark(empty / "missing.json"));
}

TEST_CASE("group ids are safe file names") {
  CHECK(valid_group_id("group001"));
  CHECK(valid_group_id("a-b_c.d"));
  CHECK(!valid_group_id(""));
  CHECK(!valid_group_id(".."));
  CHECK(!valid_group_id("a/b"));
}

TEST_CASE("identity oracle hits every optimum and writes results") {
  TempDir bench, results;
  write_benchmark(bench.path(), make_benchmark_groups(4, 3));
  const auto before = snapshot(bench.path());
  const auto groups = load_benchmark(bench.path());
  EvalConfig cfg;
  cfg.results_dir = results.path();
  cfg.run_id = "oracle";
  const auto report = run_eval(IdentityOracle{}, groups, cfg);
  REQUIRE(report.group_count() == 4);
  for (const auto& r : report.rows) {
    CHECK(r.psnr == kPsnrCap);
    CHECK(r.ssim == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(r.lpips == 0.0);
    CHECK(r.dreamsim == 0.0);
    CHECK(r.clip_i == 100.0);
    CHECK(r.dino == 100.0);
  }
  CHECK(fs::exists(results / "oracle/report.csv"));
  CHECK(fs::exists(results / "oracle/report.txt"));
  CHECK(fs::exists(results / "oracle/group000/completed.png"));
  CHECK(read_text(results / "oracle/report.csv") == report.to_csv());
  CHECK(snapshot(bench.path()) == before);
}

TEST_CASE("model evaluation is deterministic and reference-aware") {
  Denoiser model(tiny_config(64), 4);
  SamplerConfig sc;
  sc.steps = 3;
  ModelCompleter completer(model, sc);
  const auto groups = make_benchmark_groups(2, 4);
  EvalConfig cfg;
  cfg.seed = 9;
  const auto a = run_eval(completer, groups, cfg);
  const auto b = run_eval(completer, groups, cfg);
  CHECK(a.rows == b.rows);
  cfg.drop_references = true;
  const auto c = run_eval(completer, groups, cfg);
  CHECK(!(c.rows == a.rows));
  CHECK(group_seed(9, "group000") != group_seed(9, "group001"));
}

TEST_CASE("mask ratio ablation shape") {
  MaskRatioAblation setup{tiny_config(64), TrainConfig{}, SamplerConfig{}, EvalConfig{}, 3};
  setup.train.iterations = 1;
  setup.train.batch_size = 1;
  setup.sampler.steps = 1;
  const auto figures = make_figures(2, 5);
  const auto groups = make_benchmark_groups(1, 5);
  const std::vector<double> one{0.5};
  const auto cols = run_mask_ratio_ablation(figures, groups, one, setup);
  REQUIRE(cols.size() == 1);
  CHECK(cols[0].ratio == 0.5);
  const std::string csv = ablation_table_csv(cols);
  CHECK(csv.rfind("metric,50%\n", 0) == 0);
  CHECK(ablation_table_text(cols).find("DreamSim") != std::string::npos);
}

TEST_CASE("dataset writer") {
  TempDir a, b;
  write_dataset(a.path(), 3, 2, 1);
  write_dataset(b.path(), 3, 2, 1);
  CHECK(snapshot(a.path()) == snapshot(b.path()));
  const auto manifest = nlohmann::json::parse(read_text(a / "figures.json"));
  CHECK(manifest["pairs"] == 3);
  CHECK(load_figures(a.path()).size() == 3);
  const fs::path first = a / "figures" / load_figures(a.path())[0].figure_id;
  CHECK(fs::exists(first / "target.png"));
  CHECK(fs::exists(first / "occluded.png"));
  CHECK(fs::exists(first / "mask.png"));
  const auto meta = nlohmann::json::parse(read_text(first / "meta.json"));
  for (const char* key : {"figure_id", "pose", "background", "caption", "seed"}) CHECK(meta.contains(key));
  CHECK(load_benchmark(a / "benchmark").size() == 2);

  const auto held = make_benchmark_groups(3, 1);
  for (const auto& f : make_figures(3, 1))
    for (const auto& g : held) CHECK(g.group_id != f.figure_id);
}
