#include "refcomp/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "refcomp/masks.hpp"

namespace refcomp {

using nn::Graph;
using nn::Mat;
using nn::Var;

// ---- config -----------------------------------------------------------------

bool ModelConfig::has_attention(int level) const {
  return std::find(attention_levels.begin(), attention_levels.end(), level) != attention_levels.end();
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& why) { throw ConfigError("model config: " + why); };
  if (image_size <= 0 || latent_factor <= 0 || image_size % latent_factor != 0)
    fail("image_size must be a positive multiple of latent_factor");
  if (channel_multipliers.empty()) fail("channel_multipliers must not be empty");
  for (int m : channel_multipliers)
    if (m <= 0) fail("channel multipliers must be positive");
  if (latent_size() % (1 << (levels() - 1)) != 0) fail("latent grid not divisible across levels");
  if (attention_levels.empty()) fail("attention_levels must not be empty");
  std::set<int> seen;
  for (int l : attention_levels) {
    if (l < 0 || l >= levels()) fail("attention level " + std::to_string(l) + " outside [0, levels)");
    if (!seen.insert(l).second) fail("duplicate attention level");
  }
  if (base_channels <= 0 || token_dim <= 0 || heads <= 0 || ffn_multiplier <= 0) fail("widths must be positive");
  for (int l : attention_levels)
    if (inner(l) % heads != 0) fail("token_dim * multiplier must be divisible by heads");
  if (semantic_token_count <= 0 || semantic_dim <= 0 || max_prompt_tokens < 0)
    fail("semantic token settings must be positive");
}

std::string to_string(ReferenceEncoderMode m) { return m == ReferenceEncoderMode::backbone ? "backbone" : "semantic_only"; }

ReferenceEncoderMode parse_reference_encoder_mode(const std::string& s) {
  if (s == "backbone") return ReferenceEncoderMode::backbone;
  if (s == "semantic_only") return ReferenceEncoderMode::semantic_only;
  throw ConfigError("unknown reference_encoder_mode '" + s + "'");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"image_size", c.image_size},
                     {"latent_factor", c.latent_factor},
                     {"base_channels", c.base_channels},
                     {"channel_multipliers", c.channel_multipliers},
                     {"attention_levels", c.attention_levels},
                     {"heads", c.heads},
                     {"token_dim", c.token_dim},
                     {"ffn_multiplier", c.ffn_multiplier},
                     {"semantic_token_count", c.semantic_token_count},
                     {"semantic_dim", c.semantic_dim},
                     {"max_prompt_tokens", c.max_prompt_tokens},
                     {"semantic_backend", c.semantic_backend},
                     {"use_reference_mask", c.use_reference_mask},
                     {"use_prompt", c.use_prompt},
                     {"reference_encoder_mode", to_string(c.reference_encoder_mode)},
                     {"train_reference_encoder", c.train_reference_encoder}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  static const std::set<std::string> known = {
      "image_size",       "latent_factor",     "base_channels",  "channel_multipliers", "attention_levels",
      "heads",            "token_dim",         "ffn_multiplier", "semantic_token_count", "semantic_dim",
      "max_prompt_tokens", "semantic_backend", "use_reference_mask", "use_prompt", "reference_encoder_mode",
      "train_reference_encoder"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("unknown model config key '" + it.key() + "'");
  try {
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) j.at(key).get_to(field);
    };
    get("image_size", c.image_size);
    get("latent_factor", c.latent_factor);
    get("base_channels", c.base_channels);
    get("channel_multipliers", c.channel_multipliers);
    get("attention_levels", c.attention_levels);
    get("heads", c.heads);
    get("token_dim", c.token_dim);
    get("ffn_multiplier", c.ffn_multiplier);
    get("semantic_token_count", c.semantic_token_count);
    get("semantic_dim", c.semantic_dim);
    get("max_prompt_tokens", c.max_prompt_tokens);
    get("semantic_backend", c.semantic_backend);
    get("use_reference_mask", c.use_reference_mask);
    get("use_prompt", c.use_prompt);
    get("train_reference_encoder", c.train_reference_encoder);
    if (j.contains("reference_encoder_mode"))
      c.reference_encoder_mode = parse_reference_encoder_mode(j.at("reference_encoder_mode").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

// ---- latent coder -------------------------------------------------------------

LatentGrid encode_image_to_latent(const Raster& image, int factor) {
  if (factor <= 0 || image.height % factor != 0 || image.width % factor != 0)
    throw InvalidArgument("image size must be divisible by the latent factor");
  LatentGrid g;
  g.h = image.height / factor;
  g.w = image.width / factor;
  g.channels = factor * factor * 3;
  g.values.resize(static_cast<Eigen::Index>(g.h) * g.w, g.channels);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      for (int c = 0; c < 3; ++c)
        g.values((y / factor) * g.w + x / factor, ((y % factor) * factor + x % factor) * 3 + c) = image.at(y, x, c);
  return g;
}

Raster decode_latent(const LatentGrid& latent, int factor) {
  if (factor <= 0 || latent.channels != factor * factor * 3)
    throw InvalidArgument("latent channel count does not match the latent factor");
  Raster r(latent.h * factor, latent.w * factor);
  for (int y = 0; y < r.height; ++y)
    for (int x = 0; x < r.width; ++x)
      for (int c = 0; c < 3; ++c)
        r.at(y, x, c) = latent.values((y / factor) * latent.w + x / factor, ((y % factor) * factor + x % factor) * 3 + c);
  return r;
}

LatentGrid mask_to_latent(const Mask& latent_mask) {
  LatentGrid g;
  g.h = latent_mask.height;
  g.w = latent_mask.width;
  g.channels = 1;
  g.values.resize(static_cast<Eigen::Index>(g.h) * g.w, 1);
  for (size_t i = 0; i < latent_mask.bits.size(); ++i) g.values(static_cast<Eigen::Index>(i), 0) = latent_mask.bits[i];
  return g;
}

// ---- semantic tokens / cache -----------------------------------------------------

Mat SemanticTokens::select(TokenOrigin o) const {
  std::vector<int> rows;
  for (size_t i = 0; i < origin.size(); ++i)
    if (origin[i] == o) rows.push_back(static_cast<int>(i));
  return nn::mask_reference_features(tokens, rows);
}

std::size_t SemanticTokens::count(TokenOrigin o) const {
  return static_cast<std::size_t>(std::count(origin.begin(), origin.end(), o));
}

const CachedReference* FeatureCache::find(PartLabel label) const {
  for (const auto& r : refs_)
    if (r.label == label) return &r;
  return nullptr;
}

bool FeatureCache::operator==(const FeatureCache& o) const {
  if (layer_count_ != o.layer_count_ || refs_.size() != o.refs_.size()) return false;
  if (semantic_.origin != o.semantic_.origin || semantic_.tokens != o.semantic_.tokens) return false;
  for (size_t i = 0; i < refs_.size(); ++i) {
    const auto &a = refs_[i], &b = o.refs_[i];
    if (a.label != b.label || a.layers.size() != b.layers.size()) return false;
    for (size_t l = 0; l < a.layers.size(); ++l)
      if (a.layers[l].kept != b.layers[l].kept || a.layers[l].tokens != b.layers[l].tokens) return false;
  }
  return true;
}

// ---- denoiser ---------------------------------------------------------------------

nn::RowVec timestep_embedding(int timestep, int dim) {
  nn::RowVec e(dim);
  const int half = dim / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / std::max(1, half));
    e(i) = std::sin(timestep * freq);
    e(half + i) = std::cos(timestep * freq);
  }
  if (dim % 2) e(dim - 1) = 0.0;
  return e;
}

namespace {

std::vector<int> space_to_depth_index(int s, int c) {
  const int s2 = s / 2;
  std::vector<int> idx(static_cast<size_t>(s) * s * c);
  for (int Y = 0; Y < s2; ++Y)
    for (int X = 0; X < s2; ++X)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          for (int ch = 0; ch < c; ++ch)
            idx[static_cast<size_t>(((Y * s2 + X) * 4 + dy * 2 + dx) * c + ch)] =
                ((2 * Y + dy) * s + 2 * X + dx) * c + ch;
  return idx;
}

std::vector<int> depth_to_space_index(int s, int c) {
  const int s2 = s / 2;
  std::vector<int> idx(static_cast<size_t>(s) * s * c);
  for (int Y = 0; Y < s2; ++Y)
    for (int X = 0; X < s2; ++X)
      for (int dy = 0; dy < 2; ++dy)
        for (int dx = 0; dx < 2; ++dx)
          for (int ch = 0; ch < c; ++ch)
            idx[static_cast<size_t>(((2 * Y + dy) * s + 2 * X + dx) * c + ch)] =
                ((Y * s2 + X) * 4 + dy * 2 + dx) * c + ch;
  return idx;
}

Mat signed_latent(const Raster& image, int factor) {
  return (encode_image_to_latent(image, factor).values.array() * 2.0 - 1.0).matrix();
}

}  // namespace

Denoiser::Denoiser(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  semantic_ = make_semantic_encoder(config_.semantic_backend, config_.semantic_token_count, config_.semantic_dim,
                                    config_.image_size);
  const int L = config_.levels();
  for (int l = 0; l < L; ++l)
    if (config_.has_attention(l))
      slots_.push_back({l == L - 1 ? AttentionSlot::Stage::middle : AttentionSlot::Stage::encoder, l});
  for (int l = L - 2; l >= 0; --l)
    if (config_.has_attention(l)) slots_.push_back({AttentionSlot::Stage::decoder, l});
  for (int l = 0; l + 1 < L; ++l) {
    down_index_.push_back(space_to_depth_index(config_.grid(l), config_.width(l)));
    up_index_.push_back(depth_to_space_index(config_.grid(l), config_.width(l)));
  }

  Rng rng(seed);
  build(complete_, "comp.", true, rng);
  const int first_ref = params_.size();
  build(reference_, "ref.", false, rng);
  label_embedding_ = params_.add("ref.label_embedding", nn::random_normal(kPartCount, config_.width(0), 0.3, rng));
  for (int i = first_ref; i < params_.size(); ++i) reference_param_ids_.push_back(i);
  null_token_ = params_.add("comp.null_token", nn::random_normal(1, config_.semantic_dim, 0.3, rng));
  copy_complete_into_reference();
  set_reference_trainable(config_.train_reference_encoder);
}

void Denoiser::build(Branch& br, const std::string& prefix, bool complete, Rng& rng) {
  auto lin = [&](const std::string& name, int in, int out, bool bias, double gain = 1.0) {
    Linear l;
    l.w = params_.add(prefix + name + ".w", nn::random_normal(in, out, gain / std::sqrt(static_cast<double>(in)), rng));
    if (bias) l.b = params_.add(prefix + name + ".b", Mat::Zero(1, out));
    return l;
  };
  auto weight = [&](const std::string& name, int in, int out, double gain = 1.0) {
    return params_.add(prefix + name, nn::random_normal(in, out, gain / std::sqrt(static_cast<double>(in)), rng));
  };
  auto ln = [&](const std::string& name, int c) {
    return Norm{params_.add(prefix + name + ".gamma", Mat::Ones(1, c)), params_.add(prefix + name + ".beta", Mat::Zero(1, c))};
  };
  const auto& c = config_;
  const int c0 = c.width(0);
  const int n0 = c.latent_size() * c.latent_size();
  br.stem = lin("stem", 2 * c.latent_channels() + 1, c0, true);
  br.pos = params_.add(prefix + "pos", nn::random_normal(n0, c0, 0.3, rng));
  br.t1 = lin("time.fc1", c0, c0, true);
  br.t2 = lin("time.fc2", c0, c0, true);
  for (int l = 0; l + 1 < c.levels(); ++l) {
    const std::string s = std::to_string(l);
    br.down.push_back(lin("down" + s, 4 * c.width(l), c.width(l + 1), true));
    br.up.push_back(lin("up" + s, c.width(l + 1), 4 * c.width(l), true));
    br.merge.push_back(lin("merge" + s, 2 * c.width(l), c.width(l), true));
  }
  for (size_t i = 0; i < slots_.size(); ++i) {
    const int level = slots_[i].level;
    const int w = c.width(level), d = c.inner(level);
    const std::string p = "block" + std::to_string(i) + ".";
    Block b;
    b.temb = lin(p + "temb", c0, w, true);
    b.ln_attn = ln(p + "ln_attn", w);
    b.wq = weight(p + "attn.wq", w, d);
    b.wk = weight(p + "attn.wk", w, d);
    b.wv = weight(p + "attn.wv", w, d);
    b.wo = weight(p + "attn.wo", d, w, 0.5);
    if (complete) {
      b.ln_cross = ln(p + "ln_cross", w);
      b.cq = weight(p + "cross.wq", w, d);
      b.ck_text = weight(p + "cross.wk_text", c.semantic_dim, d);
      b.cv_text = weight(p + "cross.wv_text", c.semantic_dim, d);
      b.ck_image = weight(p + "cross.wk_image", c.semantic_dim, d);
      b.cv_image = weight(p + "cross.wv_image", c.semantic_dim, d);
      b.co = weight(p + "cross.wo", d, w, 0.5);
    }
    b.ln_ffn = ln(p + "ln_ffn", w);
    b.ff1 = lin(p + "ffn.fc1", w, c.ffn_multiplier * w, true);
    b.ff2 = lin(p + "ffn.fc2", c.ffn_multiplier * w, w, true, 0.5);
    br.blocks.push_back(b);
  }
  if (complete) {
    br.out_norm = ln("out_norm", c0);
    br.out_mod = lin("out_mod", c0, 2 * c0, true, 0.0);
    br.skip = lin("skip", c0, 3 * c.latent_channels(), true, 0.0);
    br.out = lin("out", c0, c.latent_channels(), true, 0.1);
  }
}

void Denoiser::copy_complete_into_reference() {
  for (int id : reference_param_ids_) {
    const std::string& name = params_.name(id);
    const int twin = params_.find("comp." + name.substr(4));
    if (twin >= 0 && params_.value(twin).rows() == params_.value(id).rows() &&
        params_.value(twin).cols() == params_.value(id).cols())
      params_.value(id) = params_.value(twin);
  }
}

void Denoiser::set_reference_trainable(bool on) {
  for (int id : reference_param_ids_) params_.set_trainable(id, on);
}

bool Denoiser::is_reference_param(int id) const {
  return std::binary_search(reference_param_ids_.begin(), reference_param_ids_.end(), id);
}

Var Denoiser::linear(Graph& g, const Linear& l, Var x) const {
  Var y = nn::matmul(x, params_.bind(g, l.w));
  if (l.b >= 0) y = nn::add_row(y, params_.bind(g, l.b));
  return y;
}

Var Denoiser::norm(Graph& g, const Norm& n, Var x) const {
  return nn::layer_norm(x, params_.bind(g, n.gamma), params_.bind(g, n.beta));
}

Var Denoiser::null_token(Graph& g) const { return params_.bind(g, null_token_); }

Var Denoiser::run_branch(Graph& g, const Branch& br, Var input, Var extra_row, int timestep,
                         const GraphConditioning* cond, std::vector<Var>* capture) const {
  const auto& c = config_;
  const int L = c.levels();
  Var x = nn::add(linear(g, br.stem, input), params_.bind(g, br.pos));
  if (extra_row) x = nn::add_row(x, extra_row);
  Var temb = g.constant(timestep_embedding(timestep, c.width(0)));
  temb = linear(g, br.t2, nn::silu(linear(g, br.t1, temb)));

  int layer = 0;
  bool done = false;
  auto block = [&](Var h_in) {
    const Block& b = br.blocks[static_cast<size_t>(layer)];
    Var y = nn::add_row(h_in, linear(g, b.temb, temb));
    Var h = norm(g, b.ln_attn, y);
    if (capture) {
      capture->push_back(h);
      if (static_cast<int>(capture->size()) == attention_layer_count()) {
        done = true;
        return y;
      }
    }
    nn::AttentionVars attn{params_.bind(g, b.wq), params_.bind(g, b.wk), params_.bind(g, b.wv), params_.bind(g, b.wo)};
    std::span<const Var> refs;
    if (cond) refs = cond->layer_refs[static_cast<size_t>(layer)];
    y = nn::add(y, nn::rfa_attention(h, refs, attn, c.heads));
    if (cond) {
      nn::CrossAttentionVars cross{params_.bind(g, b.cq),       params_.bind(g, b.ck_text), params_.bind(g, b.cv_text),
                                   params_.bind(g, b.ck_image), params_.bind(g, b.cv_image), params_.bind(g, b.co)};
      y = nn::add(y, nn::decoupled_cross_attention(norm(g, b.ln_cross, y), cond->text_tokens, cond->image_tokens,
                                                   cross, c.heads));
    }
    y = nn::add(y, linear(g, b.ff2, nn::silu(linear(g, b.ff1, norm(g, b.ln_ffn, y)))));
    ++layer;
    return y;
  };

  std::vector<Var> skips(static_cast<size_t>(L));
  for (int l = 0; l < L; ++l) {
    if (c.has_attention(l)) {
      x = block(x);
      if (done) return x;
    }
    if (l + 1 < L) {
      skips[static_cast<size_t>(l)] = x;
      const auto& idx = down_index_[static_cast<size_t>(l)];
      const int g2 = c.grid(l + 1);
      x = linear(g, br.down[static_cast<size_t>(l)], nn::rearrange(x, g2 * g2, 4 * c.width(l), idx));
    }
  }
  for (int l = L - 2; l >= 0; --l) {
    const int gl = c.grid(l);
    Var up = nn::rearrange(linear(g, br.up[static_cast<size_t>(l)], x), gl * gl, c.width(l),
                           up_index_[static_cast<size_t>(l)]);
    std::array<Var, 2> parts{up, skips[static_cast<size_t>(l)]};
    x = linear(g, br.merge[static_cast<size_t>(l)], nn::concat_cols(parts));
    if (c.has_attention(l)) {
      x = block(x);
      if (done) return x;
    }
  }
  if (br.out.w < 0) return x;
  Var mod = linear(g, br.out_mod, nn::silu(temb));
  Var ones = g.constant(Mat::Ones(x.value().rows(), 1));
  Var h = norm(g, br.out_norm, x);
  h = nn::add(h, nn::mul(h, nn::matmul(ones, nn::slice_cols(mod, 0, c.width(0)))));
  h = nn::add(h, nn::matmul(ones, nn::slice_cols(mod, c.width(0), c.width(0))));
  const int lc = c.latent_channels();
  Var gate = linear(g, br.skip, nn::silu(temb));
  Var out = linear(g, br.out, h);
  out = nn::add(out, nn::mul(nn::slice_cols(input, 0, lc), nn::matmul(ones, nn::slice_cols(gate, 0, lc))));
  out = nn::add(out, nn::mul(nn::slice_cols(input, lc + 1, lc), nn::matmul(ones, nn::slice_cols(gate, lc, lc))));
  Var inside = nn::matmul(nn::slice_cols(input, lc, 1), g.constant(Mat::Ones(1, lc)));
  Var noisy_inside = nn::mul(nn::slice_cols(input, 0, lc), inside);
  return nn::add(out, nn::mul(noisy_inside, nn::matmul(ones, nn::slice_cols(gate, 2 * lc, lc))));
}

void Denoiser::validate_references(std::span<const ReferencePart> references) const {
  if (references.size() > static_cast<size_t>(kPartCount)) throw InvalidArgument("at most six references");
  std::set<PartLabel> seen;
  for (const auto& r : references) {
    if (r.image.height != config_.image_size || r.image.width != config_.image_size)
      throw InvalidArgument("reference '" + std::string(part_name(r.label)) + "' has size " +
                            std::to_string(r.image.height) + "x" + std::to_string(r.image.width) + ", expected " +
                            std::to_string(config_.image_size));
    r.validate();
    if (!seen.insert(r.label).second)
      throw InvalidArgument("duplicate reference label " + std::string(part_name(r.label)));
  }
}

std::vector<int> Denoiser::kept_indices(const Mask& reference_mask, int layer) const {
  const int s = config_.grid(slots_.at(static_cast<size_t>(layer)).level);
  std::vector<int> kept;
  if (!config_.use_reference_mask) {
    kept.resize(static_cast<size_t>(s) * s);
    for (int i = 0; i < s * s; ++i) kept[static_cast<size_t>(i)] = i;
    return kept;
  }
  const int factor = config_.image_size / s;
  const auto counts = footprint_counts(reference_mask, factor);
  for (size_t i = 0; i < counts.size(); ++i)
    if (2 * counts[i] >= factor * factor) kept.push_back(static_cast<int>(i));
  if (kept.empty()) {
    // Degenerate mask at this resolution: keep the best-covered cell.
    const auto best = std::max_element(counts.begin(), counts.end()) - counts.begin();
    kept.push_back(static_cast<int>(best));
  }
  return kept;
}

Raster Denoiser::masked_reference_image(const ReferencePart& r) const {
  // Pixels outside the reference mask never reach the network.
  return config_.use_reference_mask ? apply_mask(r.image, mask_not(r.mask), 0.0) : r.image;
}

std::vector<Var> Denoiser::encode_reference(Graph& g, const ReferencePart& r) const {
  const int n0 = config_.latent_size() * config_.latent_size();
  Mat lat = signed_latent(masked_reference_image(r), config_.latent_factor);
  Mat input(n0, 2 * config_.latent_channels() + 1);
  input << lat, Mat::Zero(n0, 1), lat;
  const int label = static_cast<int>(r.label);
  Var label_row = nn::gather_rows(params_.bind(g, label_embedding_), std::span<const int>(&label, 1));
  std::vector<Var> captured;
  run_branch(g, reference_, g.constant(std::move(input)), label_row, 0, nullptr, &captured);
  return captured;
}

SemanticTokens Denoiser::semantic_encode(std::span<const ReferencePart> references,
                                         const std::optional<std::string>& prompt) const {
  validate_references(references);
  std::vector<const ReferencePart*> sorted;
  for (const auto& r : references) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->label < b->label; });

  std::vector<Mat> blocks;
  SemanticTokens out;
  for (const auto* r : sorted) {
    blocks.push_back(semantic_->encode_image(masked_reference_image(*r)));
    out.origin.insert(out.origin.end(), static_cast<size_t>(blocks.back().rows()), TokenOrigin::reference_image);
  }
  if (config_.use_prompt && prompt && !prompt->empty()) {
    Mat text = semantic_->encode_text(*prompt, config_.max_prompt_tokens);
    if (text.rows() > 0) {
      out.origin.insert(out.origin.end(), static_cast<size_t>(text.rows()), TokenOrigin::text_prompt);
      blocks.push_back(std::move(text));
    }
  }
  if (blocks.empty()) {
    out.tokens = params_.value(null_token_);
    out.origin = {TokenOrigin::null_token};
    return out;
  }
  Eigen::Index rows = 0;
  for (const auto& b : blocks) rows += b.rows();
  out.tokens.resize(rows, config_.semantic_dim);
  Eigen::Index r = 0;
  for (const auto& b : blocks) {
    out.tokens.middleRows(r, b.rows()) = b;
    r += b.rows();
  }
  return out;
}

FeatureCache Denoiser::reference_encode(std::span<const ReferencePart> references,
                                        const std::optional<std::string>& prompt) const {
  validate_references(references);
  FeatureCache cache;
  cache.layer_count_ = attention_layer_count();
  cache.semantic_ = semantic_encode(references, prompt);
  std::vector<const ReferencePart*> sorted;
  for (const auto& r : references) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->label < b->label; });
  for (const auto* r : sorted) {
    CachedReference entry{r->label, {}};
    if (config_.reference_encoder_mode == ReferenceEncoderMode::backbone) {
      Graph g(false);
      auto captured = encode_reference(g, *r);
      for (int l = 0; l < attention_layer_count(); ++l)
        entry.layers.push_back({captured[static_cast<size_t>(l)].value(), kept_indices(r->mask, l)});
    }
    cache.refs_.push_back(std::move(entry));
  }
  return cache;
}

FeatureCache Denoiser::empty_cache() const { return reference_encode({}, std::nullopt); }

GraphConditioning Denoiser::condition(Graph& g, std::span<const ReferencePart> references,
                                      const std::optional<std::string>& prompt) const {
  validate_references(references);
  GraphConditioning cond;
  cond.layer_refs.resize(static_cast<size_t>(attention_layer_count()));
  std::vector<const ReferencePart*> sorted;
  for (const auto& r : references) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->label < b->label; });
  if (config_.reference_encoder_mode == ReferenceEncoderMode::backbone) {
    for (const auto* r : sorted) {
      auto captured = encode_reference(g, *r);
      for (int l = 0; l < attention_layer_count(); ++l) {
        const auto kept = kept_indices(r->mask, l);
        cond.layer_refs[static_cast<size_t>(l)].push_back(nn::gather_rows(captured[static_cast<size_t>(l)], kept));
      }
    }
  }
  const SemanticTokens sem = semantic_encode(references, prompt);
  const Mat image = sem.select(TokenOrigin::reference_image);
  const Mat text = sem.select(TokenOrigin::text_prompt);
  cond.image_tokens = image.rows() > 0 ? g.constant(image) : null_token(g);
  cond.text_tokens = text.rows() > 0 ? g.constant(text) : null_token(g);
  return cond;
}

GraphConditioning Denoiser::condition(Graph& g, const FeatureCache& cache) const {
  if (cache.layer_count() != attention_layer_count())
    throw ConfigError("feature cache has " + std::to_string(cache.layer_count()) + " layers, model has " +
                      std::to_string(attention_layer_count()));
  GraphConditioning cond;
  cond.layer_refs.resize(static_cast<size_t>(attention_layer_count()));
  if (config_.reference_encoder_mode == ReferenceEncoderMode::backbone) {
    for (const auto& r : cache.references()) {
      if (static_cast<int>(r.layers.size()) != attention_layer_count())
        throw ConfigError("feature cache entry lacks per-layer features");
      for (int l = 0; l < attention_layer_count(); ++l) {
        const auto& lf = r.layers[static_cast<size_t>(l)];
        const int w = config_.width(slots_[static_cast<size_t>(l)].level);
        const int s = config_.grid(slots_[static_cast<size_t>(l)].level);
        if (lf.tokens.cols() != w || lf.tokens.rows() != s * s)
          throw ConfigError("feature cache layer " + std::to_string(l) + " does not match the architecture");
        cond.layer_refs[static_cast<size_t>(l)].push_back(g.constant(nn::mask_reference_features(lf.tokens, lf.kept)));
      }
    }
  }
  const Mat image = cache.semantic().select(TokenOrigin::reference_image);
  const Mat text = cache.semantic().select(TokenOrigin::text_prompt);
  if ((image.rows() > 0 && image.cols() != config_.semantic_dim) || (text.rows() > 0 && text.cols() != config_.semantic_dim))
    throw ConfigError("semantic token width does not match the architecture");
  cond.image_tokens = image.rows() > 0 ? g.constant(image) : null_token(g);
  cond.text_tokens = text.rows() > 0 ? g.constant(text) : null_token(g);
  return cond;
}

Var Denoiser::complete_graph(Graph& g, Var noisy, Var latent_mask, Var masked_input, int timestep,
                             const GraphConditioning& cond) const {
  const int n0 = config_.latent_size() * config_.latent_size();
  if (noisy.rows() != n0 || masked_input.rows() != n0 || latent_mask.rows() != n0 ||
      noisy.cols() != config_.latent_channels() || masked_input.cols() != config_.latent_channels() ||
      latent_mask.cols() != 1)
    throw InvalidArgument("complete_forward: latent shapes do not match the model");
  if (static_cast<int>(cond.layer_refs.size()) != attention_layer_count())
    throw ConfigError("conditioning does not match the attention layers");
  if (timestep < 0) throw InvalidArgument("timestep must be nonnegative");
  std::array<Var, 3> parts{noisy, latent_mask, masked_input};
  return run_branch(g, complete_, nn::concat_cols(parts), Var{}, timestep, &cond, nullptr);
}

LatentGrid Denoiser::complete_forward(const LatentGrid& noisy, const Mask& latent_mask, const LatentGrid& masked_input,
                                      int timestep, const FeatureCache& cache) const {
  if (!noisy.same_shape(masked_input)) throw InvalidArgument("complete_forward: noisy and masked latents differ");
  if (latent_mask.height != noisy.h || latent_mask.width != noisy.w)
    throw InvalidArgument("complete_forward: latent mask shape differs");
  Graph g(false);
  GraphConditioning cond = condition(g, cache);
  Var out = complete_graph(g, g.constant(noisy.values), g.constant(mask_to_latent(latent_mask).values),
                           g.constant(masked_input.values), timestep, cond);
  LatentGrid result{noisy.h, noisy.w, noisy.channels, out.value()};
  return result;
}

}  // namespace refcomp
