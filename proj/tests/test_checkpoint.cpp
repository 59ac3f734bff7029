#include <doctest.h>

#include <fstream>

#include "refcomp/checkpoint.hpp"
#include "refcomp/errors.hpp"
#include "support.hpp"

using namespace refcomp;
using namespace refcomp::testing;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void spit(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << s;
}

}  // namespace

TEST_CASE("round trip matches float32 rounding") {
  TempDir dir;
  ModelConfig c = tiny_config(16);
  c.use_prompt = false;
  Denoiser model(c, 11);
  save_checkpoint(model, dir / "m.ckpt", {{"note", "hello"}});
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  CHECK(loaded.metadata["note"] == "hello");
  CHECK(loaded.model->config() == c);

  Denoiser rounded(c, 11);
  round_to_storage_precision(rounded);
  const auto& a = rounded.params();
  const auto& b = loaded.model->params();
  REQUIRE(a.size() == b.size());
  for (int i = 0; i < a.size(); ++i) {
    CHECK(a.name(i) == b.name(i));
    CHECK(a.value(i) == b.value(i));
  }
}

TEST_CASE("saving is deterministic") {
  TempDir dir;
  Denoiser model(tiny_config(16), 2);
  save_checkpoint(model, dir / "a.ckpt");
  save_checkpoint(model, dir / "b.ckpt");
  CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
}

TEST_CASE("damaged files raise IoError") {
  TempDir dir;
  Denoiser model(tiny_config(16), 2);
  save_checkpoint(model, dir / "m.ckpt");
  const std::string bytes = slurp(dir / "m.ckpt");

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
  spit(dir / "trunc.ckpt", bytes.substr(0, bytes.size() - 7));
  CHECK_THROWS_AS(load_checkpoint(dir / "trunc.ckpt"), IoError);
  spit(dir / "short.ckpt", bytes.substr(0, 6));
  CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), IoError);
  std::string magic = bytes;
  magic[0] = 'X';
  spit(dir / "magic.ckpt", magic);
  CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), IoError);
  std::string header = bytes;
  header[12] = '#';
  spit(dir / "header.ckpt", header);
  CHECK_THROWS_AS(load_checkpoint(dir / "header.ckpt"), IoError);
  spit(dir / "tail.ckpt", bytes + "extra");
  CHECK_THROWS_AS(load_checkpoint(dir / "tail.ckpt"), IoError);
}

TEST_CASE("architecture disagreement raises ConfigError") {
  TempDir dir;
  Denoiser model(tiny_config(16), 2);
  save_checkpoint(model, dir / "m.ckpt");
  std::string bytes = slurp(dir / "m.ckpt");
  // Rewrite the stored width in the header without touching the tensors.
  const std::string from = "\"base_channels\":" + std::to_string(model.config().base_channels);
  const auto at = bytes.find(from);
  REQUIRE(at != std::string::npos);
  const std::string to = "\"base_channels\":" + std::to_string(model.config().base_channels + 1);
  REQUIRE(to.size() == from.size());
  bytes.replace(at, from.size(), to);
  spit(dir / "wide.ckpt", bytes);
  CHECK_THROWS_AS(load_checkpoint(dir / "wide.ckpt"), ConfigError);
}
