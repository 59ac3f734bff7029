#include "refcomp/config.hpp"

#include <charconv>
#include <functional>
#include <map>

#include <fmt/format.h>

namespace refcomp {

using nlohmann::json;

void RunConfig::validate() const {
  model.validate();
  train.validate();
  sampler.validate(make_schedule());
  eval.validate();
}

namespace {

struct Binding {
  ConfigKey key;
  std::function<json(const RunConfig&)> get;
  std::function<void(RunConfig&, const json&)> set;
};

template <typename T>
Binding bind_key(std::string name, ConfigKind kind, std::string help, T RunConfig::*section, auto member) {
  Binding b{{std::move(name), kind, std::move(help)}, {}, {}};
  b.get = [section, member](const RunConfig& c) { return json((c.*section).*member); };
  b.set = [section, member](RunConfig& c, const json& v) {
    using F = std::remove_reference_t<decltype((c.*section).*member)>;
    (c.*section).*member = v.get<F>();
  };
  return b;
}

const std::vector<Binding>& bindings() {
  using K = ConfigKind;
  static const std::vector<Binding> all = [] {
    std::vector<Binding> b;
    auto M = &RunConfig::model;
    b.push_back(bind_key("model.image_size", K::integer, "image side in pixels", M, &ModelConfig::image_size));
    b.push_back(bind_key("model.latent_factor", K::integer, "pixels per latent cell side", M, &ModelConfig::latent_factor));
    b.push_back(bind_key("model.base_channels", K::integer, "residual width at the finest level", M,
                     &ModelConfig::base_channels));
    b.push_back(bind_key("model.channel_multipliers", K::int_list, "width multiplier per level", M,
                     &ModelConfig::channel_multipliers));
    b.push_back(bind_key("model.attention_levels", K::int_list, "levels carrying attention layers", M,
                     &ModelConfig::attention_levels));
    b.push_back(bind_key("model.heads", K::integer, "attention heads", M, &ModelConfig::heads));
    b.push_back(bind_key("model.token_dim", K::integer, "attention width at the finest level", M, &ModelConfig::token_dim));
    b.push_back(bind_key("model.ffn_multiplier", K::integer, "feed-forward expansion", M, &ModelConfig::ffn_multiplier));
    b.push_back(bind_key("model.semantic_token_count", K::integer, "semantic tokens per reference", M,
                     &ModelConfig::semantic_token_count));
    b.push_back(bind_key("model.semantic_dim", K::integer, "semantic token width", M, &ModelConfig::semantic_dim));
    b.push_back(bind_key("model.max_prompt_tokens", K::integer, "prompt words kept", M, &ModelConfig::max_prompt_tokens));
    b.push_back(bind_key("model.semantic_backend", K::text, "semantic encoder id", M, &ModelConfig::semantic_backend));
    b.push_back(bind_key("model.use_reference_mask", K::boolean, "drop reference tokens outside the part mask", M,
                     &ModelConfig::use_reference_mask));
    b.push_back(bind_key("model.use_prompt", K::boolean, "feed the text prompt to cross-attention", M,
                     &ModelConfig::use_prompt));
    {
      Binding mode{{"model.reference_encoder_mode", K::text, "backbone or semantic_only"}, {}, {}};
      mode.get = [](const RunConfig& c) { return json(to_string(c.model.reference_encoder_mode)); };
      mode.set = [](RunConfig& c, const json& v) {
        c.model.reference_encoder_mode = parse_reference_encoder_mode(v.get<std::string>());
      };
      b.push_back(std::move(mode));
    }
    b.push_back(bind_key("model.train_reference_encoder", K::boolean, "update the reference branch during training", M,
                     &ModelConfig::train_reference_encoder));

    auto T = &RunConfig::train;
    b.push_back(bind_key("train.learning_rate", K::real, "optimizer step size", T, &TrainConfig::learning_rate));
    b.push_back(bind_key("train.batch_size", K::integer, "samples per step", T, &TrainConfig::batch_size));
    b.push_back(bind_key("train.iterations", K::integer, "optimizer steps", T, &TrainConfig::iterations));
    b.push_back(bind_key("train.p_drop_all", K::real, "probability of dropping every reference", T,
                     &TrainConfig::p_drop_all));
    b.push_back(bind_key("train.p_drop_each", K::real, "per-reference drop probability", T, &TrainConfig::p_drop_each));
    b.push_back(bind_key("train.seed", K::unsigned_integer, "training seed", T, &TrainConfig::seed));
    b.push_back(bind_key("train.checkpoint_every", K::integer, "steps between checkpoints (0: final only)", T,
                     &TrainConfig::checkpoint_every));
    b.push_back(bind_key("train.grad_clip", K::real, "global gradient norm clip (0: off)", T, &TrainConfig::grad_clip));
    b.push_back(bind_key("train.mask_weighted_loss", K::boolean, "restrict the loss to masked latent cells", T,
                     &TrainConfig::mask_weighted_loss));
    b.push_back(bind_key("train.max_references", K::integer, "references kept per training sample", T,
                     &TrainConfig::max_references));
    {
      auto mask_field = [&](std::string name, K kind, std::string help, auto member) {
        Binding m{{std::move(name), kind, std::move(help)}, {}, {}};
        m.get = [member](const RunConfig& c) { return json(c.train.mask.*member); };
        m.set = [member](RunConfig& c, const json& v) {
          c.train.mask.*member = v.get<std::remove_reference_t<decltype(c.train.mask.*member)>>();
        };
        b.push_back(std::move(m));
      };
      mask_field("train.mask_random_ratio", K::real, "probability of the random-grid mask family",
                 &MaskSpec::random_ratio);
      mask_field("train.mask_cell_fraction", K::real, "grid rectangle side as a fraction of the image",
                 &MaskSpec::grid_cell_fraction);
      mask_field("train.mask_dilate_px", K::integer, "body-shape mask dilation", &MaskSpec::dilate_px);
      Binding lo{{"train.mask_repeats_min", K::integer, "fewest grid rectangles"}, {}, {}};
      lo.get = [](const RunConfig& c) { return json(c.train.mask.repeats_range.first); };
      lo.set = [](RunConfig& c, const json& v) { c.train.mask.repeats_range.first = v.get<int>(); };
      b.push_back(std::move(lo));
      Binding hi{{"train.mask_repeats_max", K::integer, "most grid rectangles"}, {}, {}};
      hi.get = [](const RunConfig& c) { return json(c.train.mask.repeats_range.second); };
      hi.set = [](RunConfig& c, const json& v) { c.train.mask.repeats_range.second = v.get<int>(); };
      b.push_back(std::move(hi));
    }

    auto S = &RunConfig::sampler;
    b.push_back(bind_key("sampler.steps", K::integer, "DDIM steps", S, &SamplerConfig::steps));
    b.push_back(bind_key("sampler.guidance_scale", K::real, "classifier-free guidance scale", S,
                     &SamplerConfig::guidance_scale));
    b.push_back(bind_key("sampler.eta", K::real, "DDIM stochasticity", S, &SamplerConfig::eta));
    b.push_back(bind_key("sampler.clip_x0", K::boolean, "clamp predicted clean latents", S, &SamplerConfig::clip_x0));

    auto E = &RunConfig::eval;
    b.push_back(bind_key("eval.seed", K::unsigned_integer, "evaluation seed", E, &EvalConfig::seed));
    b.push_back(bind_key("eval.max_references", K::integer, "references used per group", E, &EvalConfig::max_references));
    b.push_back(bind_key("eval.drop_references", K::boolean, "evaluate without references", E,
                     &EvalConfig::drop_references));
    b.push_back(bind_key("eval.embed_crop", K::boolean, "embedding metrics on the mask crop", E, &EvalConfig::embed_crop));
    b.push_back(bind_key("eval.run_id", K::text, "results subdirectory", E, &EvalConfig::run_id));
    {
      auto backend = [&](std::string name, std::string help, std::string MetricBackendIds::*member) {
        Binding m{{std::move(name), K::text, std::move(help)}, {}, {}};
        m.get = [member](const RunConfig& c) { return json(c.eval.backends.*member); };
        m.set = [member](RunConfig& c, const json& v) { c.eval.backends.*member = v.get<std::string>(); };
        b.push_back(std::move(m));
      };
      backend("eval.clip_backend", "image/text embedding backend", &MetricBackendIds::clip);
      backend("eval.dino_backend", "image embedding backend", &MetricBackendIds::dino);
      backend("eval.dreamsim_backend", "perceptual distance backend", &MetricBackendIds::dreamsim);
      backend("eval.lpips_backend", "perceptual distance backend", &MetricBackendIds::lpips);
    }
    return b;
  }();
  return all;
}

const Binding& find_binding(const std::string& key) {
  for (const auto& b : bindings())
    if (b.key.name == key) return b;
  throw ConfigError("unknown config key '" + key + "'");
}

long long parse_int(const std::string& key, std::string_view s) {
  long long v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc{} || p != end) throw ConfigError(fmt::format("{}: '{}' is not an integer", key, s));
  return v;
}

json parse_text(const ConfigKey& k, const std::string& text) {
  switch (k.kind) {
    case ConfigKind::integer:
      return parse_int(k.name, text);
    case ConfigKind::unsigned_integer: {
      unsigned long long v = 0;
      auto [p, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
      if (ec != std::errc{} || p != text.data() + text.size())
        throw ConfigError(fmt::format("{}: '{}' is not a nonnegative integer", k.name, text));
      return v;
    }
    case ConfigKind::real: {
      try {
        size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
      } catch (const std::exception&) {
        throw ConfigError(fmt::format("{}: '{}' is not a number", k.name, text));
      }
    }
    case ConfigKind::boolean:
      if (text == "true" || text == "1" || text == "on") return true;
      if (text == "false" || text == "0" || text == "off") return false;
      throw ConfigError(fmt::format("{}: '{}' is not a boolean", k.name, text));
    case ConfigKind::text:
      return text;
    case ConfigKind::int_list: {
      json arr = json::array();
      std::string_view rest = text;
      while (!rest.empty()) {
        const auto comma = rest.find(',');
        arr.push_back(parse_int(k.name, rest.substr(0, comma)));
        if (comma == std::string_view::npos) break;
        rest.remove_prefix(comma + 1);
      }
      return arr;
    }
  }
  throw std::logic_error("unhandled config kind");
}

}  // namespace

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& b : bindings()) k.push_back(b.key);
    return k;
  }();
  return keys;
}

void set_config_json(RunConfig& cfg, const std::string& key, const json& value) {
  const auto& b = find_binding(key);
  try {
    b.set(cfg, value);
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: invalid value {} ({})", key, value.dump(), e.what()));
  }
}

void set_config_value(RunConfig& cfg, const std::string& key, const std::string& text) {
  const auto& b = find_binding(key);
  set_config_json(cfg, key, parse_text(b.key, text));
}

json get_config_value(const RunConfig& cfg, const std::string& key) { return find_binding(key).get(cfg); }

std::string format_config_value(const RunConfig& cfg, const std::string& key) {
  const json v = get_config_value(cfg, key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string out;
    for (const auto& e : v) out += (out.empty() ? "" : ",") + e.dump();
    return out;
  }
  return v.dump();
}

void apply_config_json(RunConfig& cfg, const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (it.value().is_object()) {
      for (auto in = it.value().begin(); in != it.value().end(); ++in)
        set_config_json(cfg, it.key() + "." + in.key(), in.value());
    } else {
      set_config_json(cfg, it.key(), it.value());
    }
  }
}

RunConfig load_config_file(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  json j;
  try {
    j = json::parse(bytes.begin(), bytes.end());
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  RunConfig cfg;
  apply_config_json(cfg, j);
  return cfg;
}

json config_to_json(const RunConfig& cfg) {
  json out = json::object();
  for (const auto& b : bindings()) {
    const auto dot = b.key.name.find('.');
    out[b.key.name.substr(0, dot)][b.key.name.substr(dot + 1)] = b.get(cfg);
  }
  return out;
}

}  // namespace refcomp
