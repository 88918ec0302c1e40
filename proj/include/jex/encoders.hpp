#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "jex/tensor.hpp"

namespace jex {

using NamedTensors = std::vector<std::pair<std::string, Tensor*>>;

inline constexpr std::size_t kDefaultMaxQuestionTokens = 26;

// Lowercase, drop punctuation, split on whitespace.
std::vector<std::string> normalize_tokens(std::string_view text);

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0;
  static constexpr std::size_t kUnk = 1;

  Vocabulary();

  // Every normalized token of `questions`, indexed in first-seen order.
  static Vocabulary build(std::span<const std::string> questions);

  std::size_t add(const std::string& token);
  std::size_t index(const std::string& token) const;
  const std::string& token(std::size_t index) const { return tokens_.at(index); }
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Token ids of `question`; unknown words map to Vocabulary::kUnk. Keeps at
// most `max_tokens` leading tokens (0 = no limit).
std::vector<std::size_t> tokenize(std::string_view question, const Vocabulary& vocab,
                                  std::size_t max_tokens = 0);

// Single-layer GRU over learned token embeddings. Matrices act on row
// vectors: x (1 x embed) * w_* (embed x hidden), h (1 x hidden) * u_*.
struct GruParams {
  Tensor embedding;  // vocab x embed
  Tensor w_z, u_z, b_z;
  Tensor w_r, u_r, b_r;
  Tensor w_h, u_h, b_h;

  static GruParams zeros(std::size_t vocab, std::size_t embed, std::size_t hidden);
  static GruParams random(std::size_t vocab, std::size_t embed, std::size_t hidden,
                          std::mt19937_64& rng);

  std::size_t vocab_size() const { return embedding.dim(0); }
  std::size_t embed_dim() const { return embedding.dim(1); }
  std::size_t hidden() const { return u_z.dim(0); }

  NamedTensors named(const std::string& prefix);
  void validate() const;
};

// Tape-recorded encoder: returns the final hidden state (1 x hidden).
Var gru_encode(Tape& tape, GruParams& params, std::span<const std::size_t> tokens);
// Convenience evaluation without gradient bookkeeping.
std::vector<double> gru_encode(std::span<const std::size_t> tokens, const GruParams& params);

struct VisualFeatures {
  Tensor grid;    // G x n_v, one row per grid cell
  Tensor pooled;  // 1 x n_v

  std::size_t cells() const { return grid.dim(0); }
  std::size_t channels() const { return grid.dim(1); }
  void validate() const;
};

// Feature file: "JEXF", u32 version (1), u32 ndim, ndim x u32 dims, then the
// f32 grid payload (product of dims, channel-last) followed by the pooled
// vector (last dim floats). Leading dims are flattened into grid cells.
void save_features(const std::filesystem::path& path, const VisualFeatures& features);
VisualFeatures load_features(const std::filesystem::path& path);

// Uniform(-sqrt(3/fan_in), sqrt(3/fan_in)): unit variance per fan-in.
Tensor init_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

}  // namespace jex
