#include "refcomp/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace refcomp::nn {

Var multi_head_attention(Var q, Var k, Var v, int heads, AttentionTrace* trace) {
  if (heads <= 0 || q.cols() % heads != 0) throw std::invalid_argument("attention: inner width not divisible by heads");
  if (k.cols() != q.cols() || v.cols() != q.cols() || k.rows() != v.rows())
    throw std::invalid_argument("attention: q/k/v shape mismatch");
  const Eigen::Index dh = q.cols() / heads;
  const Scalar s = 1.0 / std::sqrt(static_cast<Scalar>(dh));
  if (heads == 1) {
    Var p = softmax_rows(scale(matmul_nt(q, k), s));
    if (trace) trace->probabilities.push_back(p.value());
    return matmul(p, v);
  }
  std::vector<Var> outs;
  outs.reserve(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = slice_cols(q, h * dh, dh), kh = slice_cols(k, h * dh, dh), vh = slice_cols(v, h * dh, dh);
    Var p = softmax_rows(scale(matmul_nt(qh, kh), s));
    if (trace) trace->probabilities.push_back(p.value());
    outs.push_back(matmul(p, vh));
  }
  return concat_cols(outs);
}

Var rfa_attention(Var f_input, std::span<const Var> masked_refs, const AttentionVars& w, int heads,
                  AttentionTrace* trace) {
  for (auto r : masked_refs)
    if (r.cols() != f_input.cols()) throw std::invalid_argument("rfa_attention: reference token width mismatch");
  if (f_input.cols() != w.wq.rows()) throw std::invalid_argument("rfa_attention: input width mismatch");
  Var concat = f_input;
  if (!masked_refs.empty()) {
    std::vector<Var> parts{f_input};
    for (auto r : masked_refs)
      if (r.rows() > 0) parts.push_back(r);
    concat = concat_rows(parts);
  }
  Var q = matmul(f_input, w.wq);
  Var k = matmul(concat, w.wk);
  Var v = matmul(concat, w.wv);
  return matmul(multi_head_attention(q, k, v, heads, trace), w.wo);
}

Var decoupled_cross_attention(Var x, Var text_tokens, Var image_tokens, const CrossAttentionVars& w, int heads) {
  if (text_tokens.rows() == 0 || image_tokens.rows() == 0)
    throw std::invalid_argument("decoupled_cross_attention: empty token stream");
  if (x.cols() != w.wq.rows() || text_tokens.cols() != w.wk_text.rows() || image_tokens.cols() != w.wk_image.rows())
    throw std::invalid_argument("decoupled_cross_attention: width mismatch");
  Var q = matmul(x, w.wq);
  Var a = multi_head_attention(q, matmul(text_tokens, w.wk_text), matmul(text_tokens, w.wv_text), heads);
  Var b = multi_head_attention(q, matmul(image_tokens, w.wk_image), matmul(image_tokens, w.wv_image), heads);
  return matmul(add(a, b), w.wo);
}

Mat rfa_attention(const Mat& f_input, std::span<const Mat> masked_refs, const AttentionWeights& w, int heads,
                  AttentionTrace* trace) {
  Graph g(false);
  std::vector<Var> refs;
  for (const auto& r : masked_refs) refs.push_back(g.constant(r));
  AttentionVars v{g.constant(w.wq), g.constant(w.wk), g.constant(w.wv), g.constant(w.wo)};
  return rfa_attention(g.constant(f_input), refs, v, heads, trace).value();
}

Mat decoupled_cross_attention(const Mat& x, const Mat& text_tokens, const Mat& image_tokens,
                              const CrossAttentionWeights& w, int heads) {
  Graph g(false);
  CrossAttentionVars v{g.constant(w.wq),       g.constant(w.wk_text),  g.constant(w.wv_text),
                       g.constant(w.wk_image), g.constant(w.wv_image), g.constant(w.wo)};
  return decoupled_cross_attention(g.constant(x), g.constant(text_tokens), g.constant(image_tokens), v, heads).value();
}

Mat mask_reference_features(const Mat& tokens, std::span<const int> kept) {
  Mat out(static_cast<Eigen::Index>(kept.size()), tokens.cols());
  for (size_t i = 0; i < kept.size(); ++i) {
    if (kept[i] < 0 || kept[i] >= tokens.rows())
      throw std::logic_error("mask_reference_features: kept index out of range");
    out.row(static_cast<Eigen::Index>(i)) = tokens.row(kept[i]);
  }
  return out;
}

}  // namespace refcomp::nn
