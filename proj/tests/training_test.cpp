#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "jex/error.hpp"
#include "jex/toycorpus.hpp"
#include "jex/training.hpp"

namespace fs = std::filesystem;
using namespace jex;

namespace {

struct Corpus {
  fs::path dir;
  ToyCorpus toy;
  std::vector<IqaTriplet> trainset, valset;
};

const Corpus& corpus() {
  static const Corpus c = [] {
    Corpus c;
    c.dir = fs::temp_directory_path() / "jex_training_test";
    fs::remove_all(c.dir);
    ToySpec spec;
    spec.train_scenes = 120;
    spec.val_scenes = 40;
    spec.seed = 5;
    c.toy = generate_toy(spec);
    write_toy(c.toy, c.dir);
    c.trainset = select_triplets(c.toy.triplets, c.toy.truth.trainset);
    c.valset = select_triplets(c.toy.triplets, c.toy.truth.valset_known);
    return c;
  }();
  return c;
}

TrainConfig quick(std::size_t epochs = 3) {
  auto c = TrainConfig::toy();
  c.epochs = epochs;
  c.stage2_epochs = epochs;
  c.seed = 2;
  return c;
}

}  // namespace

TEST(Consensus, ThirdOfMatchesCappedAtOne) {
  const std::vector<std::string> h = {"2", "2", "3", "2", "2", "4", "2", "2", "2", "2"};
  EXPECT_DOUBLE_EQ(consensus_score("2", h), 1.0);
  EXPECT_DOUBLE_EQ(consensus_score("3", h), 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(consensus_score("5", h), 0.0);
  const std::vector<std::string> two = {"a", "a", "b"};
  EXPECT_DOUBLE_EQ(consensus_score("a", two), 2.0 / 3.0);
  EXPECT_EQ(parse_score_mode("exact"), ScoreMode::exact);
  EXPECT_EQ(parse_score_mode("consensus"), ScoreMode::consensus);
  EXPECT_THROW(parse_score_mode("vqa"), std::invalid_argument);
}

TEST(TrainConfig, JsonOverlayAndValidation) {
  const auto base = TrainConfig::toy();
  const auto c = TrainConfig::from_json(nlohmann::json{{"learning_rate", 0.1}, {"epochs", 7}}, base);
  EXPECT_EQ(c.learning_rate, 0.1);
  EXPECT_EQ(c.epochs, 7u);
  EXPECT_EQ(c.t_e, base.t_e);
  EXPECT_EQ(TrainConfig::from_json(c.to_json()).to_json(), c.to_json());
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"epoch", 7}}), DataError);
  EXPECT_THROW(TrainConfig::from_json(nlohmann::json{{"epochs", "seven"}}), DataError);
  const TrainConfig full;
  EXPECT_EQ(full.t_q, 310u);
  EXPECT_EQ(full.t_v, 310u);
  EXPECT_EQ(full.t_e, 510u);
  EXPECT_EQ(full.question_dim, 2400u);
  EXPECT_EQ(full.answer_count, 2000u);
  EXPECT_EQ(full.key_length, 140u);
  EXPECT_EQ(full.sample_rate, 0.1);
  auto bad = base;
  bad.sample_rate = 0.0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = base;
  bad.t_e = 25;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = base;
  bad.k = 2;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Training, LossFallsAndRunsAreDeterministic) {
  const auto& c = corpus();
  FeatureCache f1(c.dir / "features"), f2(c.dir / "features");
  const auto a = stage1_train(c.trainset, f1, quick(10));
  const auto b = stage1_train(c.trainset, f2, quick(10));
  ASSERT_EQ(a.epoch_loss.size(), 10u);
  EXPECT_LT(a.epoch_loss.back(), a.epoch_loss.front());
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
  for (auto [n, t] : a.model.params.named()) {
    for (auto [m, u] : b.model.params.named()) {
      if (n == m) EXPECT_EQ(t->data, u->data) << n;
    }
  }
  EXPECT_TRUE(a.audit.ok());
  EXPECT_EQ(a.audit.maps_per_epoch.size(), 10u);
  for (auto m : a.audit.maps_per_epoch) EXPECT_EQ(m, a.examples * quick().glimpses);
  const auto other_seed = [&] {
    auto cfg = quick(10);
    cfg.seed = 3;
    FeatureCache f(c.dir / "features");
    return stage1_train(c.trainset, f, cfg).epoch_loss;
  }();
  EXPECT_NE(other_seed, a.epoch_loss);
}

TEST(Training, StoreSamplesTenPercentAndStageTwoLeavesItUntouched) {
  const auto& c = corpus();
  FeatureCache features(c.dir / "features");
  const auto cfg = quick(2);
  const auto s1 = stage1_train(c.trainset, features, cfg);
  EXPECT_EQ(s1.store.size(),
            static_cast<std::size_t>(std::ceil(0.1 * static_cast<double>(s1.examples))));
  EXPECT_EQ(s1.store.key_length(), 140u);
  EXPECT_EQ(s1.model.params.config.variant, Variant::grid);

  std::vector<std::vector<float>> rows;
  for (std::size_t r = 0; r < s1.store.size(); ++r) rows.push_back(s1.store.rows().row(r));
  const std::vector<float> keys(s1.store.kappa().begin(), s1.store.kappa().end());
  const auto s2 = stage2_train(s1.model, s1.store, c.trainset, features, cfg);
  EXPECT_EQ(s2.model.params.config.variant, Variant::jex);
  EXPECT_EQ(s2.epoch_loss.size(), 2u);
  EXPECT_TRUE(s2.audit.ok());
  EXPECT_EQ(s2.audit.maps_per_epoch.front(), 2 * s2.examples * cfg.glimpses);
  for (std::size_t r = 0; r < rows.size(); ++r) EXPECT_EQ(s1.store.rows().row(r), rows[r]);
  EXPECT_TRUE(std::equal(keys.begin(), keys.end(), s1.store.kappa().begin()));

  EXPECT_THROW(stage2_train(s1.model, ExemplarStore{}, c.trainset, features, cfg), DataError);
  EXPECT_THROW(stage2_train(s1.model, s1.store, {}, features, cfg), DataError);
}

TEST(Evaluate, AllIsCountWeightedMeanOfTypes) {
  const auto& c = corpus();
  FeatureCache features(c.dir / "features");
  const auto s1 = stage1_train(c.trainset, features, quick(3));
  for (auto mode : {ScoreMode::exact, ScoreMode::consensus}) {
    const auto r = evaluate(s1.model, nullptr, c.valset, features, mode, "valset_known");
    EXPECT_EQ(r.n, c.valset.size());
    EXPECT_EQ(r.n, r.n_yesno + r.n_number + r.n_other);
    EXPECT_GT(r.n_yesno, 0u);
    EXPECT_GT(r.n_number, 0u);
    EXPECT_GT(r.n_other, 0u);
    const double weighted = (r.yesno * r.n_yesno + r.number * r.n_number + r.other * r.n_other) / r.n;
    EXPECT_NEAR(r.all, weighted, 1e-12);
    EXPECT_EQ(r.to_json()["split"], "valset_known");
  }
  Model jex = s1.model;
  std::mt19937_64 rng(1);
  jex.params = promote_to_jex(s1.model.params, rng);
  EXPECT_THROW(evaluate(jex, nullptr, c.valset, features, ScoreMode::exact), DataError);
}

TEST(Training, ExplodingStepIsANumericError) {
  const auto& c = corpus();
  FeatureCache features(c.dir / "features");
  auto cfg = quick(3);
  cfg.learning_rate = 1e300;
  EXPECT_THROW(stage1_train(c.trainset, features, cfg), NumericError);
}

TEST(Training, AuditFlagsBadMaps) {
  AttentionAudit audit;
  audit.record({{0.5, 0.5}});
  EXPECT_TRUE(audit.ok());
  audit.record({{0.7, 0.5}});
  EXPECT_FALSE(audit.ok());
  AttentionAudit negative;
  negative.record({{1.5, -0.5}});
  EXPECT_FALSE(negative.ok());
  EXPECT_THROW(AttentionAudit{}.record({{std::nan(""), 1.0}}), NumericError);
}

TEST(Training, MissingIdsAndFeaturesAreDataErrors) {
  const auto& c = corpus();
  const std::vector<std::uint64_t> ids = {c.toy.truth.trainset.front(), 999999999};
  EXPECT_THROW(select_triplets(c.toy.triplets, ids), DataError);
  FeatureCache missing(c.dir / "nowhere");
  EXPECT_THROW(missing.get(1), DataError);
  EXPECT_THROW(stage1_train({}, missing, quick()), DataError);
}
