#pragma once

#include <span>
#include <vector>

#include "refcomp/autograd.hpp"

namespace refcomp::nn {

/// Projection weights of one attention: inputs are multiplied on the right,
/// wq/wk/wv: width x inner, wo: inner x width.
struct AttentionVars {
  Var wq, wk, wv, wo;
};

struct AttentionWeights {
  Mat wq, wk, wv, wo;
};

/// Decoupled cross-attention: one shared query projection, separate key/value
/// projections for the text stream and the semantic image stream.
struct CrossAttentionVars {
  Var wq, wk_text, wv_text, wk_image, wv_image, wo;
};

struct CrossAttentionWeights {
  Mat wq, wk_text, wv_text, wk_image, wv_image, wo;
};

/// Softmax probabilities per head, optional instrumentation.
struct AttentionTrace {
  std::vector<Mat> probabilities;
};

/// Scaled dot-product attention split over `heads` column groups; the scale is
/// 1/sqrt(inner / heads).
Var multi_head_attention(Var q, Var k, Var v, int heads, AttentionTrace* trace = nullptr);

/// Region-focused attention: queries from the input tokens only, keys and
/// values from the input tokens followed by every masked reference sequence.
Var rfa_attention(Var f_input, std::span<const Var> masked_refs, const AttentionVars& w, int heads,
                  AttentionTrace* trace = nullptr);

/// Sum of two cross-attentions (text tokens, semantic image tokens), then the
/// output projection.
Var decoupled_cross_attention(Var x, Var text_tokens, Var image_tokens, const CrossAttentionVars& w, int heads);

// Matrix-level conveniences over a throwaway no-grad graph.
Mat rfa_attention(const Mat& f_input, std::span<const Mat> masked_refs, const AttentionWeights& w, int heads,
                  AttentionTrace* trace = nullptr);
Mat decoupled_cross_attention(const Mat& x, const Mat& text_tokens, const Mat& image_tokens,
                              const CrossAttentionWeights& w, int heads);

/// Exactly the kept rows, in index order. Dropped rows take no part downstream.
Mat mask_reference_features(const Mat& tokens, std::span<const int> kept);

}  // namespace refcomp::nn
