#pragma once

#include <memory>
#include <string>
#include <string_view>

#include "refcomp/autograd.hpp"
#include "refcomp/image.hpp"

namespace refcomp {

/// Global-embedding backend for reference images and prompts.
class SemanticEncoder {
 public:
  virtual ~SemanticEncoder() = default;
  virtual std::string id() const = 0;
  /// token_count x dim tokens for one image.
  virtual nn::Mat encode_image(const Raster& image) const = 0;
  /// One token per word (at most max_tokens); zero rows for empty text.
  virtual nn::Mat encode_text(std::string_view text, int max_tokens) const = 0;
};

/// Registered ids: "toy-linear". Throws ConfigError otherwise.
std::unique_ptr<SemanticEncoder> make_semantic_encoder(const std::string& id, int token_count, int dim,
                                                       int image_size);

/// Lower-cased alphanumeric words.
std::vector<std::string> tokenize_words(std::string_view text);

/// Fixed pseudo-random unit-variance vector for a word; identical across runs.
nn::RowVec word_vector(std::string_view word, int dim, std::uint64_t salt);

}  // namespace refcomp
