#include <gtest/gtest.h>

#include <filesystem>
#include <random>

#include "gradcheck.hpp"
#include "jex/attention.hpp"
#include "jex/model.hpp"

namespace fs = std::filesystem;
using namespace jex;

namespace {

constexpr std::size_t kCells = 4, kVisual = 6, kQuestion = 5, kRank = 3, kAnswers = 4, kVocab = 7;

ModelConfig tiny(Variant v, std::size_t glimpses = 1) {
  ModelConfig c;
  c.variant = v;
  c.embed_dim = 3;
  c.question_dim = kQuestion;
  c.visual_dim = kVisual;
  c.grid_cells = kCells;
  c.t_q = kRank;
  c.t_v = kRank;
  c.t_e = kRank * glimpses;
  c.glimpses = glimpses;
  return c;
}

VisualFeatures features(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  VisualFeatures f{Tensor::zeros({kCells, kVisual}), Tensor::zeros({1, kVisual})};
  for (auto& v : f.grid.data) v = d(rng);
  for (std::size_t c = 0; c < kVisual; ++c) {
    for (std::size_t g = 0; g < kCells; ++g) f.pooled.data[c] += f.grid.at(g, c) / kCells;
  }
  return f;
}

ExemplarStore tiny_store(ModelParams& grid_params, std::size_t t_e) {
  std::vector<EmbeddingRecord> recs;
  for (std::uint64_t i = 0; i < 6; ++i) {
    const std::vector<std::size_t> tokens = {1 + i % 5, 2, 3};
    if (grid_params.config.variant == Variant::grid) {
      recs.push_back({100 + i, joint_embedding(grid_params, features(50 + i), tokens)});
    } else {
      std::mt19937_64 rng(i);
      recs.push_back({100 + i, init_uniform({kCells, t_e}, 1, rng)});
    }
  }
  return build_store(recs, 1.0, 5, 0);
}

}  // namespace

class VariantGradients : public ::testing::TestWithParam<Variant> {};

TEST_P(VariantGradients, EveryParameterMatchesFiniteDifferences) {
  std::mt19937_64 rng(17);
  auto params = ModelParams::init(tiny(GetParam()), kVocab, kAnswers, rng);
  ExemplarStore store;
  if (GetParam() == Variant::jex) store = tiny_store(params, kRank);
  const auto f = features(3);
  const std::vector<std::size_t> tokens = {2, 4, 1, 6};
  const std::vector<double> target = {0.0, 0.0, 1.0, 0.0};
  auto loss = [&](Tape& tape) {
    auto pass = forward_model(tape, params, f, tokens, GetParam() == Variant::jex ? &store : nullptr);
    return cross_entropy(pass.logits, target);
  };
  const auto r = jex::testing::check_gradients(loss, params.named());
  EXPECT_LT(r.max_rel_error, 1e-4) << variant_name(GetParam()) << " worst " << r.worst;
}

INSTANTIATE_TEST_SUITE_P(AllVariants, VariantGradients,
                         ::testing::Values(Variant::concat, Variant::dual, Variant::grid, Variant::jex),
                         [](const auto& info) { return std::string(variant_name(info.param)); });

TEST(Model, TwoGlimpseGradients) {
  std::mt19937_64 rng(21);
  auto params = ModelParams::init(tiny(Variant::jex, 2), kVocab, kAnswers, rng);
  auto store = tiny_store(params, 2 * kRank);
  const auto f = features(4);
  const std::vector<std::size_t> tokens = {3, 1, 5};
  const std::vector<double> target = {0.25, 0.25, 0.5, 0.0};
  auto loss = [&](Tape& tape) {
    return cross_entropy(forward_model(tape, params, f, tokens, &store).logits, target);
  };
  const auto r = jex::testing::check_gradients(loss, params.named());
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Model, AttentionMapsAreDistributions) {
  std::mt19937_64 rng(5);
  for (auto v : {Variant::concat, Variant::dual, Variant::grid, Variant::jex}) {
    auto params = ModelParams::init(tiny(v, 2), kVocab, kAnswers, rng);
    ExemplarStore store;
    if (v == Variant::jex) store = tiny_store(params, 2 * kRank);
    Tape tape;
    const std::vector<std::size_t> tokens = {1, 2};
    const auto pass = forward_model(tape, params, features(9), tokens, v == Variant::jex ? &store : nullptr);
    ASSERT_EQ(pass.alpha_iq.size(), 2u);
    EXPECT_EQ(pass.alpha_e.size(), v == Variant::jex ? 2u : 0u);
    for (const auto* maps : {&pass.alpha_iq, &pass.alpha_e}) {
      for (const auto& a : *maps) {
        ASSERT_EQ(a.size(), kCells);
        double s = 0.0;
        for (double w : a) {
          EXPECT_GE(w, 0.0);
          s += w;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
    }
  }
}

TEST(Model, AttentionValueFormsMatchTape) {
  std::mt19937_64 rng(6);
  const Tensor joint = init_uniform({kCells, 4}, 1, rng);
  const Tensor w = init_uniform({2, 2}, 1, rng);
  const auto grid = features(1).grid;
  Tape tape;
  const auto alphas = compute_attention(tape.constant(joint), tape.constant(w), 2);
  const auto values = compute_attention(joint, w, 2);
  for (std::size_t g = 0; g < 2; ++g) {
    for (std::size_t c = 0; c < kCells; ++c) EXPECT_NEAR(alphas[g].value().data[c], values[g][c], 1e-15);
  }
  const auto attended = attend(tape.constant(grid), alphas).value().data;
  const auto attended_v = attend(grid, values);
  ASSERT_EQ(attended.size(), 2 * kVisual);
  for (std::size_t i = 0; i < attended.size(); ++i) EXPECT_NEAR(attended[i], attended_v[i], 1e-14);
}

TEST(Model, PromotedModelStartsWithGridAnswers) {
  std::mt19937_64 rng(8);
  auto grid = ModelParams::init(tiny(Variant::grid, 1), kVocab, kAnswers, rng);
  auto store = tiny_store(grid, kRank);
  auto jex = promote_to_jex(grid, rng);
  const std::vector<std::size_t> tokens = {4, 2, 6};
  for (std::uint64_t s = 0; s < 5; ++s) {
    Tape ta, tb;
    const auto a = forward_model(ta, grid, features(s), tokens).logits.value().data;
    const auto b = forward_model(tb, jex, features(s), tokens, &store).logits.value().data;
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
  }
}

TEST(Model, JexParameterNamesExtendGrid) {
  std::mt19937_64 rng(9);
  auto grid = ModelParams::init(tiny(Variant::grid), kVocab, kAnswers, rng);
  auto jex = promote_to_jex(grid, rng);
  std::vector<std::string> gn, jn;
  for (auto& [n, t] : grid.named()) gn.push_back(n);
  for (auto& [n, t] : jex.named()) jn.push_back(n);
  for (const auto& n : gn) EXPECT_NE(std::find(jn.begin(), jn.end(), n), jn.end()) << n;
  EXPECT_NE(std::find(jn.begin(), jn.end(), "attention.exemplar"), jn.end());
  EXPECT_EQ(jn.size(), gn.size() + 1);
}

TEST(Model, JexOutputDependsOnExemplarAndStoreIsUntouched) {
  std::mt19937_64 rng(10);
  auto grid = ModelParams::init(tiny(Variant::grid), kVocab, kAnswers, rng);
  auto store = tiny_store(grid, kRank);
  auto jex = promote_to_jex(grid, rng);
  // Give the exemplar path nonzero weight.
  std::normal_distribution<double> d;
  for (auto& v : jex.answer_fusion.tau_v.data) v = d(rng);
  std::vector<std::vector<float>> before;
  for (std::size_t r = 0; r < store.size(); ++r) before.push_back(store.rows().row(r));
  const std::vector<float> keys(store.kappa().begin(), store.kappa().end());

  const std::vector<std::size_t> tokens = {1, 2, 3};
  const auto f = features(51);
  Tape t1, t2, t3;
  const auto pass = forward_model(t1, jex, f, tokens, &store);
  ASSERT_TRUE(pass.exemplar_id);
  const auto excluded = forward_model(t2, jex, f, tokens, &store, *pass.exemplar_id);
  EXPECT_NE(*excluded.exemplar_id, *pass.exemplar_id);
  EXPECT_NE(pass.logits.value().data, excluded.logits.value().data);
  const auto grid_pass = forward_model(t3, grid, f, tokens);
  EXPECT_NE(pass.logits.value().data, grid_pass.logits.value().data);
  backward(cross_entropy(pass.logits, std::vector<double>{1, 0, 0, 0}));

  for (std::size_t r = 0; r < store.size(); ++r) EXPECT_EQ(store.rows().row(r), before[r]);
  EXPECT_TRUE(std::equal(keys.begin(), keys.end(), store.kappa().begin()));
}

TEST(Model, JexRequiresStore) {
  std::mt19937_64 rng(11);
  auto p = ModelParams::init(tiny(Variant::jex), kVocab, kAnswers, rng);
  Tape tape;
  const std::vector<std::size_t> tokens = {1};
  EXPECT_THROW(forward_model(tape, p, features(1), tokens), std::invalid_argument);
}

TEST(Model, RejectsMismatchedFeatures) {
  std::mt19937_64 rng(12);
  auto p = ModelParams::init(tiny(Variant::grid), kVocab, kAnswers, rng);
  VisualFeatures f{Tensor::zeros({kCells, kVisual + 1}), Tensor::zeros({1, kVisual + 1})};
  Tape tape;
  const std::vector<std::size_t> tokens = {1};
  EXPECT_THROW(forward_model(tape, p, f, tokens), std::invalid_argument);
}

TEST(Model, VariantNamesRoundTrip) {
  for (auto v : {Variant::concat, Variant::dual, Variant::grid, Variant::jex}) {
    EXPECT_EQ(parse_variant(variant_name(v)), v);
  }
  EXPECT_THROW(parse_variant("nope"), std::invalid_argument);
}

TEST(Checkpoint, RoundTripPreservesPredictions) {
  std::mt19937_64 rng(13);
  Model m;
  std::vector<std::string> qs = {"how many cats", "is there a dog"};
  m.vocab = Vocabulary::build(qs);
  m.answers = AnswerDictionary({"yes", "no", "1", "red"});
  auto grid = ModelParams::init(tiny(Variant::grid, 1), m.vocab.size(), 4, rng);
  auto store = tiny_store(grid, kRank);
  m.params = promote_to_jex(grid, rng);
  const auto path = fs::temp_directory_path() / "jex_model_test.jexm";
  save_checkpoint(m, path);
  const Model back = load_checkpoint(path);
  EXPECT_EQ(back.params.config.variant, Variant::jex);
  EXPECT_EQ(back.vocab.tokens(), m.vocab.tokens());
  EXPECT_EQ(back.answers.answers(), m.answers.answers());
  auto a = m.params, b = back.params;
  const auto tokens = m.encode_question("How many cats?");
  Tape ta, tb;
  EXPECT_EQ(forward_model(ta, a, features(2), tokens, &store).logits.value().data,
            forward_model(tb, b, features(2), tokens, &store).logits.value().data);
}

TEST(Answers, PredictTakesLowestIndexOnTies) {
  AnswerDictionary d({"a", "b", "c"});
  EXPECT_EQ(predict(std::vector<double>{0.0, 2.0, 2.0}, d), "b");
  EXPECT_EQ(predict(std::vector<double>{5.0, 2.0, 2.0}, d), "a");
  EXPECT_THROW(AnswerDictionary({"x", "x"}), std::invalid_argument);
  EXPECT_THROW(predict(std::vector<double>{1.0}, AnswerDictionary{}), std::invalid_argument);
}
