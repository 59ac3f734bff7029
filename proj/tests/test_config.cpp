#include <doctest.h>

#include <fstream>
#include <set>

#include "refcomp/config.hpp"
#include "support.hpp"

using namespace refcomp;
using namespace refcomp::testing;

TEST_CASE("every key reads back what was set") {
  RunConfig cfg;
  set_config_value(cfg, "model.token_dim", "32");
  set_config_value(cfg, "model.channel_multipliers", "1,2,4");
  set_config_value(cfg, "model.use_prompt", "false");
  set_config_value(cfg, "model.reference_encoder_mode", "semantic_only");
  set_config_value(cfg, "train.learning_rate", "2e-5");
  set_config_value(cfg, "train.seed", "18446744073709551615");
  set_config_value(cfg, "train.mask_random_ratio", "0.25");
  set_config_value(cfg, "sampler.guidance_scale", "7.5");
  set_config_value(cfg, "eval.clip_backend", "toy-dino");
  CHECK(cfg.model.token_dim == 32);
  CHECK(cfg.model.channel_multipliers == std::vector<int>{1, 2, 4});
  CHECK(!cfg.model.use_prompt);
  CHECK(cfg.model.reference_encoder_mode == ReferenceEncoderMode::semantic_only);
  CHECK(cfg.train.learning_rate == 2e-5);
  CHECK(cfg.train.seed == 18446744073709551615ull);
  CHECK(cfg.train.mask.random_ratio == 0.25);
  CHECK(cfg.eval.backends.clip == "toy-dino");
  CHECK(get_config_value(cfg, "model.token_dim") == 32);
  CHECK(format_config_value(cfg, "model.use_prompt") == "false");
}

TEST_CASE("unknown keys and bad values are rejected") {
  RunConfig cfg;
  CHECK_THROWS_AS(set_config_value(cfg, "model.colour", "1"), ConfigError);
  CHECK_THROWS_AS(set_config_value(cfg, "model.heads", "four"), ConfigError);
  CHECK_THROWS_AS(set_config_value(cfg, "model.use_prompt", "perhaps"), ConfigError);
  CHECK_THROWS_AS(set_config_value(cfg, "model.channel_multipliers", "1,,2"), ConfigError);
  CHECK_THROWS_AS(apply_config_json(cfg, nlohmann::json{{"train", {{"speed", 3}}}}), ConfigError);
}

TEST_CASE("keys are unique and cover every section") {
  std::set<std::string> names;
  std::set<std::string> sections;
  for (const auto& k : config_keys()) {
    CHECK(names.insert(k.name).second);
    sections.insert(k.name.substr(0, k.name.find('.')));
    CHECK(!k.help.empty());
  }
  CHECK(sections == std::set<std::string>{"eval", "model", "sampler", "train"});
  RunConfig cfg;
  for (const auto& k : config_keys()) CHECK_NOTHROW(get_config_value(cfg, k.name));
}

TEST_CASE("json round trip, flat and nested") {
  RunConfig cfg;
  cfg.model.heads = 2;
  cfg.train.batch_size = 3;
  cfg.sampler.steps = 20;
  cfg.eval.run_id = "x";
  RunConfig back;
  apply_config_json(back, config_to_json(cfg));
  CHECK(config_to_json(back) == config_to_json(cfg));

  RunConfig flat;
  apply_config_json(flat, nlohmann::json{{"model.heads", 2}, {"sampler.steps", 20}});
  CHECK(flat.model.heads == 2);
  CHECK(flat.sampler.steps == 20);
}

TEST_CASE("config file") {
  TempDir dir;
  std::ofstream(dir / "run.json") << R"({"model": {"image_size": 32}, "train.iterations": 7})";
  const RunConfig cfg = load_config_file(dir / "run.json");
  CHECK(cfg.model.image_size == 32);
  CHECK(cfg.train.iterations == 7);
  std::ofstream(dir / "bad.json") << "{ not json";
  CHECK_THROWS(load_config_file(dir / "bad.json"));
  CHECK_THROWS(load_config_file(dir / "absent.json"));
}

TEST_CASE("defaults validate") {
  RunConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.sampler.steps == 50);
  CHECK(cfg.sampler.guidance_scale == 7.5);
}
