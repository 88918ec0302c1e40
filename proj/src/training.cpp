#include "jex/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include "jex/error.hpp"

namespace jex {

using nlohmann::json;

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.batch_size = 8;
  c.epochs = 40;
  c.stage2_epochs = 40;
  c.t_q = 16;
  c.t_v = 16;
  c.t_e = 24;
  c.embed_dim = 16;
  c.question_dim = 32;
  return c;
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("train config: learning_rate must be positive");
  }
  if (!(sample_rate > 0.0 && sample_rate <= 1.0)) {
    throw std::invalid_argument("train config: sample_rate must lie in (0, 1]");
  }
  for (auto [name, v] : std::initializer_list<std::pair<const char*, std::size_t>>{
           {"batch_size", batch_size}, {"epochs", epochs}, {"stage2_epochs", stage2_epochs},
           {"key_length", key_length}, {"k", k}, {"glimpses", glimpses}, {"t_q", t_q},
           {"t_v", t_v}, {"t_e", t_e}, {"answer_count", answer_count}, {"embed_dim", embed_dim},
           {"question_dim", question_dim}, {"max_question_tokens", max_question_tokens}}) {
    if (v == 0) throw std::invalid_argument(std::string("train config: ") + name + " must be positive");
  }
  if (k != 1) throw std::invalid_argument("train config: only k = 1 retrieval is supported");
  if (t_e % glimpses != 0) throw std::invalid_argument("train config: t_e must be divisible by glimpses");
}

json TrainConfig::to_json() const {
  return {{"learning_rate", learning_rate}, {"batch_size", batch_size},
          {"epochs", epochs},               {"stage2_epochs", stage2_epochs},
          {"seed", seed},                   {"sample_rate", sample_rate},
          {"key_length", key_length},       {"k", k},
          {"glimpses", glimpses},           {"t_q", t_q},
          {"t_v", t_v},                     {"t_e", t_e},
          {"answer_count", answer_count},   {"embed_dim", embed_dim},
          {"question_dim", question_dim},   {"max_question_tokens", max_question_tokens}};
}

TrainConfig TrainConfig::from_json(const json& overlay, TrainConfig c) {
  if (!overlay.is_object()) throw DataError("train config must be a JSON object");
  const json known = c.to_json();
  for (const auto& [key, value] : overlay.items()) {
    if (!known.contains(key)) throw DataError("train config: unknown key '" + key + "'");
  }
  auto take = [&](const char* key, auto& field) {
    if (!overlay.contains(key)) return;
    try {
      field = overlay.at(key).get<std::decay_t<decltype(field)>>();
    } catch (const json::exception&) {
      throw DataError(std::string("train config: '") + key + "' has the wrong type");
    }
  };
  take("learning_rate", c.learning_rate);
  take("batch_size", c.batch_size);
  take("epochs", c.epochs);
  take("stage2_epochs", c.stage2_epochs);
  take("seed", c.seed);
  take("sample_rate", c.sample_rate);
  take("key_length", c.key_length);
  take("k", c.k);
  take("glimpses", c.glimpses);
  take("t_q", c.t_q);
  take("t_v", c.t_v);
  take("t_e", c.t_e);
  take("answer_count", c.answer_count);
  take("embed_dim", c.embed_dim);
  take("question_dim", c.question_dim);
  take("max_question_tokens", c.max_question_tokens);
  return c;
}

std::shared_ptr<const VisualFeatures> FeatureCache::get(std::int64_t image_id) {
  auto it = cache_.find(image_id);
  if (it != cache_.end()) return it->second;
  auto f = std::make_shared<const VisualFeatures>(
      load_features(dir_ / (std::to_string(image_id) + ".jexf")));
  cache_.emplace(image_id, f);
  return f;
}

void AttentionAudit::record(const std::vector<std::vector<double>>& alphas) {
  for (const auto& a : alphas) {
    double s = 0.0;
    for (double w : a) {
      s += w;
      min_weight = std::min(min_weight, w);
    }
    max_sum_error = std::max(max_sum_error, std::abs(s - 1.0));
    if (!std::isfinite(s)) throw NumericError("attention weights are not finite");
    ++maps;
    if (!maps_per_epoch.empty()) ++maps_per_epoch.back();
  }
}

std::vector<IqaTriplet> select_triplets(std::span<const IqaTriplet> all,
                                        std::span<const std::uint64_t> ids) {
  std::unordered_map<std::uint64_t, const IqaTriplet*> by_id;
  for (const auto& t : all) by_id.emplace(t.question_id, &t);
  std::vector<IqaTriplet> out;
  out.reserve(ids.size());
  for (auto id : ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw DataError("manifest references unknown question id " + std::to_string(id));
    out.push_back(*it->second);
  }
  return out;
}

namespace {

struct Example {
  std::uint64_t id;
  std::shared_ptr<const VisualFeatures> features;
  std::vector<std::size_t> tokens;
  std::size_t target;
};

std::vector<Example> make_examples(const Model& model, std::span<const IqaTriplet> triplets,
                                   FeatureCache& features) {
  std::vector<Example> out;
  for (const auto& t : triplets) {
    const auto target = model.answers.index(majority_answer(t));
    if (!target) continue;
    out.push_back({t.question_id, features.get(t.image_id), model.encode_question(t.question), *target});
  }
  return out;
}

ModelConfig model_config(const TrainConfig& c, Variant variant, const VisualFeatures& sample) {
  ModelConfig m;
  m.variant = variant;
  m.embed_dim = c.embed_dim;
  m.question_dim = c.question_dim;
  m.visual_dim = sample.channels();
  m.grid_cells = sample.cells();
  m.t_q = c.t_q;
  m.t_v = c.t_v;
  m.t_e = c.t_e;
  m.glimpses = c.glimpses;
  m.max_question_tokens = c.max_question_tokens;
  return m;
}

// Mini-batch gradient descent over `examples`; the loss of each batch is
// the mean of its per-example cross entropies.
void run_epochs(StageResult& result, std::vector<Example>& examples, std::size_t epochs,
                const TrainConfig& config, std::mt19937_64& rng, const ExemplarStore* store) {
  auto& params = result.model.params;
  auto named = params.named();
  const std::size_t D = params.num_answers();
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> target(D, 0.0);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    result.audit.maps_per_epoch.push_back(0);
    double total = 0.0;
    for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      params.zero_grad();
      for (std::size_t i = begin; i < end; ++i) {
        const Example& ex = examples[order[i]];
        Tape tape;
        auto pass = forward_model(tape, params, *ex.features, ex.tokens, store,
                                  store ? std::optional<std::uint64_t>(ex.id) : std::nullopt);
        result.audit.record(pass.alpha_iq);
        result.audit.record(pass.alpha_e);
        target[ex.target] = 1.0;
        const Var loss = cross_entropy(pass.logits, target);
        target[ex.target] = 0.0;
        const double value = loss.value().data[0];
        if (!std::isfinite(value)) {
          throw NumericError("non-finite loss at epoch " + std::to_string(epoch + 1));
        }
        total += value;
        backward(loss);
      }
      const double step = config.learning_rate / static_cast<double>(end - begin);
      for (auto& [name, t] : named) {
        if (t->grad.empty()) continue;
        for (std::size_t j = 0; j < t->size(); ++j) t->data[j] -= step * t->grad[j];
      }
    }
    result.epoch_loss.push_back(total / static_cast<double>(examples.size()));
  }
  for (auto& [name, t] : named) {
    if (!t->all_finite()) throw NumericError("parameter " + name + " diverged");
  }
  params.zero_grad();
}

}  // namespace

ExemplarStore build_exemplars(const Model& grid_model, std::span<const IqaTriplet> trainset,
                              FeatureCache& features, const TrainConfig& config) {
  ModelParams params = grid_model.params;
  std::vector<EmbeddingRecord> records;
  for (const auto& ex : make_examples(grid_model, trainset, features)) {
    records.push_back({ex.id, joint_embedding(params, *ex.features, ex.tokens)});
  }
  if (records.empty()) throw DataError("no trainset triplets to store");
  auto store = build_store(records, config.sample_rate, config.key_length, config.seed);
  store.k = config.k;
  return store;
}

Stage1Result stage1_train(std::span<const IqaTriplet> trainset, FeatureCache& features,
                          const TrainConfig& config) {
  config.validate();
  if (trainset.empty()) throw DataError("stage 1: empty trainset");
  Stage1Result result;
  std::vector<std::string> questions;
  for (const auto& t : trainset) questions.push_back(t.question);
  result.model.vocab = Vocabulary::build(questions);
  result.model.answers = build_answer_dict(trainset, config.answer_count);

  std::mt19937_64 rng(config.seed);
  const auto sample = features.get(trainset.front().image_id);
  result.model.params = ModelParams::init(model_config(config, Variant::grid, *sample),
                                          result.model.vocab.size(), result.model.answers.size(), rng);
  auto examples = make_examples(result.model, trainset, features);
  if (examples.empty()) throw DataError("stage 1: no trainset answer is in the dictionary");
  result.examples = examples.size();
  run_epochs(result, examples, config.epochs, config, rng, nullptr);
  result.store = build_exemplars(result.model, trainset, features, config);
  return result;
}

StageResult stage2_train(const Model& grid_model, const ExemplarStore& store,
                         std::span<const IqaTriplet> trainset, FeatureCache& features,
                         const TrainConfig& config) {
  config.validate();
  if (store.empty()) throw DataError("stage 2: exemplar store is empty");
  if (trainset.empty()) throw DataError("stage 2: empty trainset");
  StageResult result;
  result.model.vocab = grid_model.vocab;
  result.model.answers = grid_model.answers;
  // Stage 2 draws from its own stream so it does not depend on how many
  // numbers stage 1 consumed.
  std::mt19937_64 rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  result.model.params = promote_to_jex(grid_model.params, rng);
  auto examples = make_examples(result.model, trainset, features);
  if (examples.empty()) throw DataError("stage 2: no trainset answer is in the dictionary");
  result.examples = examples.size();
  run_epochs(result, examples, config.stage2_epochs, config, rng, &store);
  return result;
}

ScoreMode parse_score_mode(std::string_view name) {
  if (name == "exact") return ScoreMode::exact;
  if (name == "consensus") return ScoreMode::consensus;
  throw std::invalid_argument("unknown scoring mode '" + std::string(name) + "'");
}

double consensus_score(const std::string& predicted, std::span<const std::string> human) {
  const auto matches = std::count(human.begin(), human.end(), predicted);
  return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

json EvalReport::to_json() const {
  return {{"split", split},     {"variant", variant_name(variant)},
          {"all", all},         {"yesno", yesno},
          {"number", number},   {"other", other},
          {"n", n},             {"n_yesno", n_yesno},
          {"n_number", n_number}, {"n_other", n_other}};
}

EvalReport evaluate(const Model& model, const ExemplarStore* store,
                    std::span<const IqaTriplet> split, FeatureCache& features, ScoreMode mode,
                    const std::string& split_name) {
  if (model.params.config.variant == Variant::jex && (store == nullptr || store->empty())) {
    throw DataError("evaluate: the jex variant needs an exemplar store");
  }
  ModelParams params = model.params;
  double sums[3] = {0.0, 0.0, 0.0};
  std::size_t counts[3] = {0, 0, 0};
  for (const auto& t : split) {
    const auto type = static_cast<std::size_t>(t.answer_type);
    const auto f = features.get(t.image_id);
    const auto tokens = model.encode_question(t.question);
    Tape tape;
    const auto pass = forward_model(tape, params, *f, tokens,
                                    params.config.variant == Variant::jex ? store : nullptr);
    const std::string& predicted = predict(pass.logits.value().data, model.answers);
    const double score = mode == ScoreMode::exact ? (predicted == majority_answer(t) ? 1.0 : 0.0)
                                                  : consensus_score(predicted, t.answers);
    sums[type] += score;
    ++counts[type];
  }
  EvalReport r;
  r.split = split_name;
  r.variant = model.params.config.variant;
  r.n_yesno = counts[0];
  r.n_number = counts[1];
  r.n_other = counts[2];
  r.n = counts[0] + counts[1] + counts[2];
  auto acc = [&](std::size_t i) { return counts[i] ? sums[i] / static_cast<double>(counts[i]) : 0.0; };
  r.yesno = acc(0);
  r.number = acc(1);
  r.other = acc(2);
  if (r.n > 0) {
    r.all = (r.yesno * static_cast<double>(r.n_yesno) + r.number * static_cast<double>(r.n_number) +
             r.other * static_cast<double>(r.n_other)) /
            static_cast<double>(r.n);
  }
  return r;
}

}  // namespace jex
