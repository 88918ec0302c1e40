#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "jex/exemplar.hpp"
#include "jex/model.hpp"
#include "jex/owsplit.hpp"

namespace jex {

struct TrainConfig {
  double learning_rate = 0.05;
  std::size_t batch_size = 32;
  std::size_t epochs = 30;         // stage 1
  std::size_t stage2_epochs = 30;  // stage 2
  std::uint64_t seed = 0;
  double sample_rate = kDefaultSampleRate;
  std::size_t key_length = kDefaultKeyLength;
  std::size_t k = 1;
  std::size_t glimpses = 2;
  std::size_t t_q = 310;
  std::size_t t_v = 310;
  std::size_t t_e = 510;
  std::size_t answer_count = kDefaultAnswerCount;
  std::size_t embed_dim = 300;
  std::size_t question_dim = 2400;
  std::size_t max_question_tokens = kDefaultMaxQuestionTokens;

  // Small dimensions sized for the synthetic corpus.
  static TrainConfig toy();

  void validate() const;
  nlohmann::json to_json() const;
  // Keys present in `overlay` replace the matching fields of `base`.
  static TrainConfig from_json(const nlohmann::json& overlay, TrainConfig base);
  static TrainConfig from_json(const nlohmann::json& overlay) { return from_json(overlay, TrainConfig{}); }
};

// Loads feature files on first use and keeps them.
class FeatureCache {
 public:
  explicit FeatureCache(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::shared_ptr<const VisualFeatures> get(std::int64_t image_id);
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::map<std::int64_t, std::shared_ptr<const VisualFeatures>> cache_;
};

// Running check that every attention map is a distribution.
struct AttentionAudit {
  std::size_t maps = 0;
  double max_sum_error = 0.0;
  double min_weight = 1.0;
  std::vector<std::size_t> maps_per_epoch;

  void record(const std::vector<std::vector<double>>& alphas);
  bool ok(double tol = 1e-6) const { return max_sum_error <= tol && min_weight >= 0.0; }
};

struct StageResult {
  Model model;
  std::vector<double> epoch_loss;
  AttentionAudit audit;
  std::size_t examples = 0;  // trainset triplets with an in-dictionary answer
};

struct Stage1Result : StageResult {
  ExemplarStore store;
};

Stage1Result stage1_train(std::span<const IqaTriplet> trainset, FeatureCache& features,
                          const TrainConfig& config);

StageResult stage2_train(const Model& grid_model, const ExemplarStore& store,
                         std::span<const IqaTriplet> trainset, FeatureCache& features,
                         const TrainConfig& config);

// Joint embeddings of every trainset triplet under a grid model, sampled
// into an exemplar store.
ExemplarStore build_exemplars(const Model& grid_model, std::span<const IqaTriplet> trainset,
                              FeatureCache& features, const TrainConfig& config);

enum class ScoreMode { exact, consensus };
ScoreMode parse_score_mode(std::string_view name);

// min(matching human answers / 3, 1)
double consensus_score(const std::string& predicted, std::span<const std::string> human);

struct EvalReport {
  std::string split;
  Variant variant = Variant::grid;
  double all = 0.0;
  double yesno = 0.0;
  double number = 0.0;
  double other = 0.0;
  std::size_t n = 0;
  std::size_t n_yesno = 0;
  std::size_t n_number = 0;
  std::size_t n_other = 0;

  nlohmann::json to_json() const;
};

EvalReport evaluate(const Model& model, const ExemplarStore* store,
                    std::span<const IqaTriplet> split, FeatureCache& features, ScoreMode mode,
                    const std::string& split_name = "");

// Triplets of `ids` looked up in `all` (missing ids are a data error).
std::vector<IqaTriplet> select_triplets(std::span<const IqaTriplet> all,
                                        std::span<const std::uint64_t> ids);

}  // namespace jex
