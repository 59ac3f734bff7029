#include "refcomp/semantic.hpp"

#include <cctype>
#include <cmath>

#include "refcomp/params.hpp"
#include "refcomp/rng.hpp"

namespace refcomp {

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

nn::RowVec word_vector(std::string_view word, int dim, std::uint64_t salt) {
  Rng rng(mix_seed(fnv1a(word), salt));
  nn::Mat v = nn::random_normal(1, dim, 1.0 / std::sqrt(static_cast<double>(dim)), rng);
  return v.row(0);
}

namespace {

/// Seeded linear patch embedding, one projection per token slot, mean-pooled
/// over all patches. Pixels are centred at 0.5 first.
class ToyLinearEncoder final : public SemanticEncoder {
 public:
  ToyLinearEncoder(int token_count, int dim, int image_size) : token_count_(token_count), dim_(dim) {
    patch_ = std::max(1, image_size / 8);
    const int patch_dim = patch_ * patch_ * 3;
    Rng rng(0x5e3a1c0ffeeull);
    for (int k = 0; k < token_count; ++k)
      proj_.push_back(nn::random_normal(patch_dim, dim, 1.0 / std::sqrt(static_cast<double>(patch_dim)), rng));
  }

  std::string id() const override { return "toy-linear"; }

  nn::Mat encode_image(const Raster& image) const override {
    if (image.height % patch_ != 0 || image.width % patch_ != 0)
      throw InvalidArgument("semantic encoder: image size not divisible by patch size");
    const int ph = image.height / patch_, pw = image.width / patch_;
    nn::RowVec mean_patch = nn::RowVec::Zero(patch_ * patch_ * 3);
    for (int py = 0; py < ph; ++py)
      for (int px = 0; px < pw; ++px)
        for (int dy = 0; dy < patch_; ++dy)
          for (int dx = 0; dx < patch_; ++dx)
            for (int c = 0; c < 3; ++c)
              mean_patch((dy * patch_ + dx) * 3 + c) += image.at(py * patch_ + dy, px * patch_ + dx, c) - 0.5;
    mean_patch /= static_cast<double>(ph * pw);
    nn::Mat out(token_count_, dim_);
    for (int k = 0; k < token_count_; ++k) out.row(k) = mean_patch * proj_[static_cast<size_t>(k)] * 4.0;
    return out;
  }

  nn::Mat encode_text(std::string_view text, int max_tokens) const override {
    auto words = tokenize_words(text);
    if (static_cast<int>(words.size()) > max_tokens) words.resize(static_cast<size_t>(max_tokens));
    nn::Mat out(static_cast<Eigen::Index>(words.size()), dim_);
    for (size_t i = 0; i < words.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = word_vector(words[i], dim_, 17);
    return out;
  }

 private:
  int token_count_, dim_, patch_ = 8;
  std::vector<nn::Mat> proj_;
};

}  // namespace

std::unique_ptr<SemanticEncoder> make_semantic_encoder(const std::string& id, int token_count, int dim,
                                                       int image_size) {
  if (id == "toy-linear") return std::make_unique<ToyLinearEncoder>(token_count, dim, image_size);
  throw ConfigError("unknown semantic backend '" + id + "'");
}

}  // namespace refcomp
