#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "refcomp/autograd.hpp"
#include "refcomp/layers.hpp"
#include "refcomp/params.hpp"
#include "refcomp/parts.hpp"
#include "refcomp/semantic.hpp"

namespace refcomp {

enum class ReferenceEncoderMode { backbone, semantic_only };

struct ModelConfig {
  int image_size = 64;
  int latent_factor = 4;
  int base_channels = 64;  // residual width at level 0
  std::vector<int> channel_multipliers{1, 2};
  std::vector<int> attention_levels{0, 1};
  int heads = 4;
  int token_dim = 64;  // attention inner width at level 0
  int ffn_multiplier = 2;
  int semantic_token_count = 4;
  int semantic_dim = 64;
  int max_prompt_tokens = 16;
  std::string semantic_backend = "toy-linear";
  bool use_reference_mask = true;
  bool use_prompt = true;
  ReferenceEncoderMode reference_encoder_mode = ReferenceEncoderMode::backbone;
  bool train_reference_encoder = true;

  /// Throws ConfigError.
  void validate() const;

  int latent_size() const { return image_size / latent_factor; }
  int latent_channels() const { return latent_factor * latent_factor * 3; }
  int levels() const { return static_cast<int>(channel_multipliers.size()); }
  int width(int level) const { return base_channels * channel_multipliers.at(static_cast<size_t>(level)); }
  int inner(int level) const { return token_dim * channel_multipliers.at(static_cast<size_t>(level)); }
  int grid(int level) const { return latent_size() >> level; }
  bool has_attention(int level) const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
std::string to_string(ReferenceEncoderMode m);
ReferenceEncoderMode parse_reference_encoder_mode(const std::string& s);

/// Latent tokens: (h*w) x channels, tokens in row-major grid order.
struct LatentGrid {
  int h = 0, w = 0, channels = 0;
  nn::Mat values;

  bool same_shape(const LatentGrid& o) const { return h == o.h && w == o.w && channels == o.channels; }
};

/// Exact space-to-depth: each factor x factor x 3 pixel block becomes one
/// token, channel index (dy * factor + dx) * 3 + c.
LatentGrid encode_image_to_latent(const Raster& image, int factor);
Raster decode_latent(const LatentGrid& latent, int factor);
/// Single-channel latent grid holding a latent-resolution mask.
LatentGrid mask_to_latent(const Mask& latent_mask);

enum class TokenOrigin { reference_image, text_prompt, null_token };

struct SemanticTokens {
  nn::Mat tokens;
  std::vector<TokenOrigin> origin;

  /// Rows of one origin, in order.
  nn::Mat select(TokenOrigin o) const;
  std::size_t count(TokenOrigin o) const;
};

/// Tokens one attention layer of the Reference branch emitted for one
/// reference, plus which of them survive the reference mask.
struct LayerFeatures {
  nn::Mat tokens;
  std::vector<int> kept;  // strictly increasing
};

struct CachedReference {
  PartLabel label;
  std::vector<LayerFeatures> layers;  // one per attention layer (empty in semantic-only mode)
};

/// Write-once store of everything the Complete branch reads about the
/// references. Entries are held in canonical part-label order.
class FeatureCache {
 public:
  const std::vector<CachedReference>& references() const { return refs_; }
  const SemanticTokens& semantic() const { return semantic_; }
  int layer_count() const { return layer_count_; }
  const CachedReference* find(PartLabel label) const;
  bool operator==(const FeatureCache& o) const;

 private:
  friend class Denoiser;
  std::vector<CachedReference> refs_;
  SemanticTokens semantic_;
  int layer_count_ = 0;
};

/// Conditioning in graph form: per attention layer the masked reference
/// token sequences, plus the two semantic streams.
struct GraphConditioning {
  std::vector<std::vector<nn::Var>> layer_refs;
  nn::Var text_tokens;
  nn::Var image_tokens;
};

/// Where an attention layer sits in the encoder/decoder.
struct AttentionSlot {
  enum class Stage { encoder, middle, decoder } stage;
  int level;
};

/// The dual-branch denoiser. The Reference branch runs at timestep zero on
/// each reference and caches the normalised inputs of its attention layers;
/// the Complete branch replaces each self-attention with region-focused
/// attention over those cached tokens, followed by decoupled cross-attention.
class Denoiser {
 public:
  Denoiser(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  const std::vector<AttentionSlot>& attention_slots() const { return slots_; }
  int attention_layer_count() const { return static_cast<int>(slots_.size()); }

  /// Mark every Reference-branch weight trainable or frozen.
  void set_reference_trainable(bool on);
  /// Overwrite Reference-branch weights with their Complete-branch twins.
  void copy_complete_into_reference();
  bool is_reference_param(int id) const;

  // ---- inference API (no gradients) ----
  FeatureCache reference_encode(std::span<const ReferencePart> references,
                                const std::optional<std::string>& prompt = std::nullopt) const;
  SemanticTokens semantic_encode(std::span<const ReferencePart> references,
                                 const std::optional<std::string>& prompt) const;
  /// Cache for the unconditional branch: no references, null semantic token.
  FeatureCache empty_cache() const;
  LatentGrid complete_forward(const LatentGrid& noisy, const Mask& latent_mask, const LatentGrid& masked_input,
                              int timestep, const FeatureCache& cache) const;

  /// Kept token indices for a reference mask at one attention layer's grid.
  std::vector<int> kept_indices(const Mask& reference_mask, int layer) const;

  // ---- graph API (training) ----
  GraphConditioning condition(nn::Graph& g, std::span<const ReferencePart> references,
                              const std::optional<std::string>& prompt) const;
  GraphConditioning condition(nn::Graph& g, const FeatureCache& cache) const;
  /// Returns the predicted noise, (h*w) x latent_channels.
  nn::Var complete_graph(nn::Graph& g, nn::Var noisy, nn::Var latent_mask, nn::Var masked_input, int timestep,
                         const GraphConditioning& cond) const;

 private:
  struct Linear {
    int w = -1, b = -1;
  };
  struct Norm {
    int gamma = -1, beta = -1;
  };
  struct Block {
    Norm ln_attn, ln_cross, ln_ffn;
    int wq = -1, wk = -1, wv = -1, wo = -1;
    int cq = -1, ck_text = -1, cv_text = -1, ck_image = -1, cv_image = -1, co = -1;
    Linear ff1, ff2, temb;
  };
  struct Branch {
    Linear stem, t1, t2;
    int pos = -1;
    std::vector<Linear> down, up, merge;
    std::vector<Block> blocks;
    Norm out_norm;
    Linear out_mod, out, skip;
  };

  void build(Branch& br, const std::string& prefix, bool complete, Rng& rng);
  void validate_references(std::span<const ReferencePart> references) const;
  /// Runs a branch. For the Reference branch `capture` receives each attention
  /// layer's normalised input and the run stops after the last one.
  nn::Var run_branch(nn::Graph& g, const Branch& br, nn::Var input, nn::Var extra_row, int timestep,
                     const GraphConditioning* cond, std::vector<nn::Var>* capture) const;
  nn::Var linear(nn::Graph& g, const Linear& l, nn::Var x) const;
  nn::Var norm(nn::Graph& g, const Norm& n, nn::Var x) const;
  Raster masked_reference_image(const ReferencePart& r) const;
  std::vector<nn::Var> encode_reference(nn::Graph& g, const ReferencePart& r) const;
  nn::Var null_token(nn::Graph& g) const;

  ModelConfig config_;
  nn::ParameterStore params_;
  std::unique_ptr<SemanticEncoder> semantic_;
  std::vector<AttentionSlot> slots_;
  Branch complete_, reference_;
  int label_embedding_ = -1;
  int null_token_ = -1;
  std::vector<std::vector<int>> down_index_, up_index_;
  std::vector<int> reference_param_ids_;
};

/// Sinusoidal embedding of a timestep, 1 x dim.
nn::RowVec timestep_embedding(int timestep, int dim);

}  // namespace refcomp
