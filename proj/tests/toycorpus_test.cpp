#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "jex/encoders.hpp"
#include "jex/error.hpp"
#include "jex/toycorpus.hpp"

namespace fs = std::filesystem;
using namespace jex;

namespace {

ToySpec small_spec(std::uint64_t seed = 3) {
  ToySpec s;
  s.train_scenes = 200;
  s.val_scenes = 100;
  s.seed = seed;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST(ToyCorpus, SameSeedGivesIdenticalFiles) {
  const auto dir = fs::temp_directory_path() / "jex_toy_test";
  fs::remove_all(dir);
  write_toy(generate_toy(small_spec()), dir / "a");
  write_toy(generate_toy(small_spec()), dir / "b");
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir / "a");
    ASSERT_TRUE(fs::exists(dir / "b" / rel)) << rel;
    EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / rel)) << rel;
    ++files;
  }
  EXPECT_EQ(files, 300u + 7u);
  const auto other = generate_toy(small_spec(4));
  EXPECT_FALSE(other.truth.same_split(generate_toy(small_spec()).truth));
}

TEST(ToyCorpus, OracleAnswersEveryQuestionOnNoiselessGrids) {
  const auto spec = small_spec();
  const auto corpus = generate_toy(spec);
  std::map<std::int64_t, const ToyScene*> scenes;
  for (const auto& s : corpus.scenes) scenes[s.image_id] = &s;
  std::size_t correct = 0;
  for (const auto& t : corpus.triplets) {
    const auto f = encode_scene(*scenes.at(t.image_id), spec);
    if (oracle_answer(f.grid, t.question, spec) == t.answer) ++correct;
  }
  EXPECT_EQ(correct, corpus.triplets.size());
  EXPECT_EQ(corpus.triplets.size(), 300u * spec.questions_per_scene);
}

TEST(ToyCorpus, NoiseIsSeededPerScene) {
  const auto spec = small_spec();
  const auto corpus = generate_toy(spec);
  const auto& scene = corpus.scenes.front();
  const auto clean = encode_scene(scene, spec);
  const auto a = encode_scene(scene, spec, toy_noise_seed(spec.seed, scene.image_id));
  const auto b = encode_scene(scene, spec, toy_noise_seed(spec.seed, scene.image_id));
  EXPECT_EQ(a.grid.data, b.grid.data);
  EXPECT_NE(a.grid.data, clean.grid.data);
  EXPECT_NE(toy_noise_seed(spec.seed, 1), toy_noise_seed(spec.seed, 2));
  EXPECT_EQ(clean.grid.shape, (Shape{16, spec.channels()}));
  EXPECT_EQ(spec.channels(), 16u);
}

TEST(ToyCorpus, TrainsetNeverTouchesUnknownConcepts) {
  const auto spec = small_spec();
  const auto corpus = generate_toy(spec);
  std::set<std::size_t> unknown_idx;
  for (std::size_t c = 0; c < spec.categories.size(); ++c) {
    if (std::count(spec.unknown.begin(), spec.unknown.end(), spec.categories[c].name)) unknown_idx.insert(c);
  }
  std::map<std::int64_t, const ToyScene*> scenes;
  for (const auto& s : corpus.scenes) scenes[s.image_id] = &s;
  std::map<std::uint64_t, const IqaTriplet*> by_id;
  for (const auto& t : corpus.triplets) by_id[t.question_id] = &t;
  for (auto qid : corpus.truth.trainset) {
    const auto& t = *by_id.at(qid);
    for (const auto& o : scenes.at(t.image_id)->objects) EXPECT_FALSE(unknown_idx.count(o.category)) << qid;
    const auto tokens = normalize_tokens(t.question);
    for (const auto& u : spec.unknown) {
      EXPECT_EQ(std::count(tokens.begin(), tokens.end(), u), 0) << t.question;
      EXPECT_EQ(std::count(tokens.begin(), tokens.end(), u + "s"), 0) << t.question;
    }
  }
  EXPECT_EQ(corpus.truth.unknown_categories, (std::vector<std::string>{"horse", "airplane"}));
  EXPECT_EQ(corpus.truth.total(), corpus.triplets.size());
  EXPECT_FALSE(corpus.truth.testset.empty());
  EXPECT_FALSE(corpus.truth.valset_unknown.empty());
}

TEST(ToyCorpus, UnknownFractionNearPlantedRate) {
  ToySpec spec;
  spec.seed = 1;
  const auto corpus = generate_toy(spec);
  const double unknown =
      static_cast<double>(corpus.truth.testset.size() + corpus.truth.valset_unknown.size()) /
      static_cast<double>(corpus.truth.total());
  // 14% of scenes plus 2% of the remaining questions.
  const double planted = 0.14 + 0.86 * 0.02;
  EXPECT_NEAR(unknown, planted, 0.04);
}

TEST(ToyCorpus, SpecValidationAndJsonOverlay) {
  auto bad = small_spec();
  bad.colors = {"red"};
  EXPECT_THROW(generate_toy(bad), std::invalid_argument);
  bad = small_spec();
  bad.unknown = {};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = small_spec();
  bad.unknown = {"person"};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = small_spec();
  bad.unknown = {"car", "bus"};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = small_spec();
  bad.max_objects = 99;
  EXPECT_THROW(bad.validate(), std::invalid_argument);

  const auto spec = ToySpec::from_json(nlohmann::json{{"seed", 9}, {"train_scenes", 12}}, small_spec());
  EXPECT_EQ(spec.seed, 9u);
  EXPECT_EQ(spec.train_scenes, 12u);
  EXPECT_EQ(spec.val_scenes, 100u);
  EXPECT_EQ(ToySpec::from_json(spec.to_json(), ToySpec{}).to_json(), spec.to_json());
  EXPECT_THROW(ToySpec::from_json(nlohmann::json{{"sede", 9}}, ToySpec{}), DataError);
  EXPECT_THROW(ToySpec::from_json(nlohmann::json{{"seed", "x"}}, ToySpec{}), DataError);
}

TEST(ToyCorpus, OracleRejectsForeignQuestions) {
  const auto spec = small_spec();
  const auto f = encode_scene(generate_toy(spec).scenes.front(), spec);
  EXPECT_THROW(oracle_answer(f.grid, "Why is the sky blue?", spec), std::invalid_argument);
  EXPECT_THROW(oracle_answer(f.grid, "How many unicorns are there?", spec), std::invalid_argument);
  EXPECT_EQ(oracle_answer(Tensor::zeros({16, 16}), "Is there a dog?", spec), "no");
  EXPECT_EQ(oracle_answer(Tensor::zeros({16, 16}), "How many cats are there?", spec), "0");
}

TEST(ToyCorpus, SplitToolReproducesTruthFromWrittenFiles) {
  const auto dir = fs::temp_directory_path() / "jex_toy_split";
  fs::remove_all(dir);
  const auto corpus = generate_toy(small_spec(7));
  write_toy(corpus, dir);
  InstanceIndex index;
  index.add_file(dir / "instances_train.json");
  index.add_file(dir / "instances_val.json");
  auto triplets = load_triplets(dir / "questions_train.json", dir / "annotations_train.json");
  const auto val = load_triplets(dir / "questions_val.json", dir / "annotations_val.json");
  triplets.insert(triplets.end(), val.begin(), val.end());
  const auto unknown = select_unknown(index.stats());
  const auto m = split_triplets(triplets, index, unknown, SynonymLexicon::defaults(index.categories()));
  EXPECT_TRUE(m.same_split(corpus.truth));
  EXPECT_TRUE(m.same_split(SplitManifest::load(dir / "truth_manifest.json")));
  const auto f = load_features(feature_path(dir / "features", corpus.scenes[3].image_id));
  const auto expected = encode_scene(corpus.scenes[3], corpus.spec,
                                     toy_noise_seed(corpus.spec.seed, corpus.scenes[3].image_id));
  ASSERT_EQ(f.grid.size(), expected.grid.size());
  for (std::size_t i = 0; i < f.grid.size(); ++i) {
    EXPECT_EQ(f.grid.data[i], static_cast<double>(static_cast<float>(expected.grid.data[i])));
  }
}
