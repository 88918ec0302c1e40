#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jex/answers.hpp"
#include "jex/encoders.hpp"
#include "jex/exemplar.hpp"
#include "jex/fusion.hpp"
#include "jex/tensor.hpp"

namespace jex {

// concat: attention driven by fusing q with (pooled ++ q)
// dual:   attention driven by fusing q with the pooled feature
// grid:   attention driven by fusing q with every grid cell
// jex:    grid path plus attention driven by the nearest stored exemplar
enum class Variant { concat, dual, grid, jex };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);

struct ModelConfig {
  Variant variant = Variant::grid;
  std::size_t embed_dim = 300;
  std::size_t question_dim = 2400;  // GRU hidden size
  std::size_t visual_dim = 2048;
  std::size_t grid_cells = 196;
  std::size_t t_q = 310;
  std::size_t t_v = 310;
  std::size_t t_e = 510;
  std::size_t glimpses = 2;
  std::size_t max_question_tokens = kDefaultMaxQuestionTokens;
};

struct ModelParams {
  ModelConfig config;
  GruParams gru;
  TuckerParams fusion;         // q with the variant's visual input
  Tensor grid_proj;            // concat/dual: n_v x t_e lift of grid cells
  Tensor attn_iq;              // (t_e / glimpses) x glimpses
  Tensor attn_exemplar;        // jex only, same shape as attn_iq
  TuckerParams answer_fusion;  // q with the attended visual vector
  Tensor classifier;           // t_e x |D| (output factor of the answer fusion)
  Tensor classifier_bias;      // 1 x |D|

  static ModelParams init(const ModelConfig& config, std::size_t vocab_size,
                          std::size_t num_answers, std::mt19937_64& rng);

  std::size_t num_answers() const { return classifier.dim(1); }
  std::size_t attended_dim() const;
  // Every trainable tensor with a stable name, in a fixed order.
  NamedTensors named();
  std::vector<std::pair<std::string, const Tensor*>> named() const;
  void validate() const;
  void zero_grad();
};

// Grid-model parameters promoted to the exemplar variant. The answer
// fusion gains input rows for the exemplar-attended features, initialized
// to zero so the promoted model starts out computing the same answers.
ModelParams promote_to_jex(const ModelParams& grid, std::mt19937_64& rng);

struct ForwardPass {
  Var logits;                                 // 1 x |D|
  Tensor joint;                               // attention-driving joint embedding, G x t_e
  std::vector<std::vector<double>> alpha_iq;  // glimpses x G
  std::vector<std::vector<double>> alpha_e;   // jex only
  std::optional<std::uint64_t> exemplar_id;   // jex only
};

// Records the full forward pass on `tape`. `store` is required for (and
// only used by) the jex variant; retrieval skips `exclude_id`.
ForwardPass forward_model(Tape& tape, ModelParams& params, const VisualFeatures& features,
                          std::span<const std::size_t> tokens, const ExemplarStore* store = nullptr,
                          std::optional<std::uint64_t> exclude_id = {});

// Grid-mode joint embedding of the first fusion (G x t_e).
Tensor joint_embedding(ModelParams& params, const VisualFeatures& features,
                       std::span<const std::size_t> tokens);

// Parameters together with the lookup tables they were trained against.
struct Model {
  ModelParams params;
  Vocabulary vocab;
  AnswerDictionary answers;

  std::vector<std::size_t> encode_question(std::string_view question) const;
};

// Checkpoint: "JEXM", u32 version, u32 count, then per record u32 name
// length, UTF-8 name, u32 ndim, ndim x u32 dims, f64 payload. Variant and
// hyperparameters are "meta/*" scalars; vocabulary and answers are
// "vocab/<token>" and "answer/<text>" scalars holding their index.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace jex
