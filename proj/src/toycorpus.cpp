#include "jex/toycorpus.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "jex/error.hpp"

namespace jex {

using nlohmann::json;

void ToySpec::validate() const {
  if (grid_side == 0) throw std::invalid_argument("toy spec: grid_side must be positive");
  if (categories.size() < 2) throw std::invalid_argument("toy spec: need at least two categories");
  if (colors.size() < 2) throw std::invalid_argument("toy spec: need at least two colors");
  if (unknown.empty()) throw std::invalid_argument("toy spec: need at least one unknown category");
  if (max_objects == 0 || max_objects > cells()) {
    throw std::invalid_argument("toy spec: max_objects must be in [1, cells]");
  }
  if (train_scenes == 0 || val_scenes == 0 || questions_per_scene == 0 || human_answers == 0) {
    throw std::invalid_argument("toy spec: sizes must be positive");
  }
  if (questions_per_scene > 10) throw std::invalid_argument("toy spec: at most 10 questions per scene");
  for (double p : {unknown_scene_rate, semantic_rate, human_error}) {
    if (!(p >= 0.0 && p <= 1.0)) throw std::invalid_argument("toy spec: rates must lie in [0, 1]");
  }
  if (!(noise >= 0.0)) throw std::invalid_argument("toy spec: noise must be nonnegative");
  std::set<std::string> names;
  for (const auto& c : categories) {
    if (c.name.empty() || c.supercategory.empty()) {
      throw std::invalid_argument("toy spec: categories need a name and a supercategory");
    }
    if (!names.insert(c.name).second) throw std::invalid_argument("toy spec: duplicate category " + c.name);
  }
  std::set<std::string> supers_with_unknown;
  for (const auto& u : unknown) {
    auto it = std::find_if(categories.begin(), categories.end(), [&](const auto& c) { return c.name == u; });
    if (it == categories.end()) throw std::invalid_argument("toy spec: unknown category " + u + " is not listed");
    if (it->supercategory == "person") throw std::invalid_argument("toy spec: person cannot be unknown");
    if (!supers_with_unknown.insert(it->supercategory).second) {
      throw std::invalid_argument("toy spec: two unknowns share supercategory " + it->supercategory);
    }
  }
  for (const auto& c : categories) {
    if (c.supercategory != "person" && !supers_with_unknown.count(c.supercategory)) {
      throw std::invalid_argument("toy spec: supercategory " + c.supercategory + " has no unknown category");
    }
  }
}

json ToySpec::to_json() const {
  json cats = json::array();
  for (const auto& c : categories) cats.push_back({{"name", c.name}, {"supercategory", c.supercategory}});
  return {{"grid_side", grid_side},
          {"categories", cats},
          {"colors", colors},
          {"unknown", unknown},
          {"train_scenes", train_scenes},
          {"val_scenes", val_scenes},
          {"questions_per_scene", questions_per_scene},
          {"max_objects", max_objects},
          {"unknown_scene_rate", unknown_scene_rate},
          {"semantic_rate", semantic_rate},
          {"noise", noise},
          {"human_answers", human_answers},
          {"human_error", human_error},
          {"seed", seed}};
}

ToySpec ToySpec::from_json(const json& overlay, ToySpec s) {
  if (!overlay.is_object()) throw DataError("toy spec must be a JSON object");
  const json known = s.to_json();
  for (const auto& [key, value] : overlay.items()) {
    if (!known.contains(key)) throw DataError("toy spec: unknown key '" + key + "'");
  }
  auto take = [&](const char* key, auto& field) {
    if (!overlay.contains(key)) return;
    try {
      field = overlay.at(key).get<std::decay_t<decltype(field)>>();
    } catch (const json::exception&) {
      throw DataError(std::string("toy spec: '") + key + "' has the wrong type");
    }
  };
  take("grid_side", s.grid_side);
  take("colors", s.colors);
  take("unknown", s.unknown);
  take("train_scenes", s.train_scenes);
  take("val_scenes", s.val_scenes);
  take("questions_per_scene", s.questions_per_scene);
  take("max_objects", s.max_objects);
  take("unknown_scene_rate", s.unknown_scene_rate);
  take("semantic_rate", s.semantic_rate);
  take("noise", s.noise);
  take("human_answers", s.human_answers);
  take("human_error", s.human_error);
  take("seed", s.seed);
  if (overlay.contains("categories")) {
    s.categories.clear();
    try {
      for (const auto& c : overlay.at("categories")) {
        s.categories.push_back({c.at("name").get<std::string>(), c.at("supercategory").get<std::string>()});
      }
    } catch (const json::exception&) {
      throw DataError("toy spec: categories must be objects with name and supercategory");
    }
  }
  return s;
}

std::vector<std::string> ToySpec::supercategories() const {
  std::set<std::string> s;
  for (const auto& c : categories) s.insert(c.supercategory);
  return {s.begin(), s.end()};
}

namespace {

std::string phrase_plural(const std::string& name) {
  const auto space = name.rfind(' ');
  if (space == std::string::npos) return naive_plural(name);
  return name.substr(0, space + 1) + naive_plural(name.substr(space + 1));
}

std::string article(const std::string& name) {
  return std::string("aeiou").find(name.front()) != std::string::npos ? "an" : "a";
}

std::vector<std::string> number_answers(const ToySpec& spec) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i <= spec.max_objects; ++i) out.push_back(std::to_string(i));
  return out;
}

template <typename Rng>
std::size_t pick(std::size_t n, Rng& rng) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

std::size_t count_of(const ToyScene& scene, std::size_t category) {
  return static_cast<std::size_t>(std::count_if(scene.objects.begin(), scene.objects.end(),
                                                [&](const auto& o) { return o.category == category; }));
}


}  // namespace

ToyCorpus generate_toy(const ToySpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::vector<std::size_t> known, unknown;
  for (std::size_t c = 0; c < spec.categories.size(); ++c) {
    const bool u = std::find(spec.unknown.begin(), spec.unknown.end(), spec.categories[c].name) !=
                   spec.unknown.end();
    (u ? unknown : known).push_back(c);
  }
  const auto numbers = number_answers(spec);
  const std::vector<std::string> yes_no = {"no", "yes"};
  std::bernoulli_distribution coin(0.5);

  ToyCorpus corpus;
  corpus.spec = spec;
  // Unknown names in the order owsplit reports them (by supercategory).
  std::vector<std::size_t> ordered_unknown = unknown;
  std::sort(ordered_unknown.begin(), ordered_unknown.end(), [&](auto a, auto b) {
    return spec.categories[a].supercategory < spec.categories[b].supercategory;
  });
  for (auto u : ordered_unknown) corpus.truth.unknown_categories.push_back(spec.categories[u].name);

  for (SourceSplit split : {SourceSplit::train, SourceSplit::val}) {
    const bool train = split == SourceSplit::train;
    const std::size_t n = train ? spec.train_scenes : spec.val_scenes;
    const std::int64_t base = train ? 1 : 500001;
    for (std::size_t s = 0; s < n; ++s) {
      ToyScene scene;
      scene.image_id = base + static_cast<std::int64_t>(s);
      scene.split = split;
      const bool unknown_scene = std::bernoulli_distribution(spec.unknown_scene_rate)(rng);
      const std::size_t count = 1 + pick(spec.max_objects, rng);
      std::vector<std::size_t> cells(spec.cells());
      std::iota(cells.begin(), cells.end(), std::size_t{0});
      for (std::size_t i = 0; i < count; ++i) {
        std::swap(cells[i], cells[i + pick(cells.size() - i, rng)]);
        ToyObject o;
        o.category = (unknown_scene && i == 0) ? unknown[pick(unknown.size(), rng)]
                                               : known[pick(known.size(), rng)];
        o.color = pick(spec.colors.size(), rng);
        o.cell = cells[i];
        scene.objects.push_back(o);
      }
      std::sort(scene.objects.begin(), scene.objects.end(),
                [](const auto& a, const auto& b) { return a.cell < b.cell; });

      for (std::size_t j = 0; j < spec.questions_per_scene; ++j) {
        // Subject category: a present one half the time, otherwise any
        // allowed category. Known scenes only name known categories, except
        // for the occasional question about an absent unknown one.
        std::size_t subject;
        if (unknown_scene && coin(rng)) {
          subject = std::find_if(scene.objects.begin(), scene.objects.end(), [&](const auto& o) {
                      return std::find(unknown.begin(), unknown.end(), o.category) != unknown.end();
                    })->category;
        } else if (!unknown_scene && std::bernoulli_distribution(spec.semantic_rate)(rng)) {
          subject = unknown[pick(unknown.size(), rng)];
        } else {
          std::vector<std::size_t> present;
          for (const auto& o : scene.objects) {
            if (std::find(unknown.begin(), unknown.end(), o.category) == unknown.end()) {
              present.push_back(o.category);
            }
          }
          subject = (!present.empty() && coin(rng)) ? present[pick(present.size(), rng)]
                                                    : known[pick(known.size(), rng)];
        }
        const auto& name = spec.categories[subject].name;
        const std::size_t n_subject = count_of(scene, subject);
        std::size_t kind = pick(3, rng);  // 0 count, 1 color, 2 presence
        if (kind == 1 && n_subject != 1) kind = 0;

        IqaTriplet t;
        t.question_id = static_cast<std::uint64_t>(scene.image_id) * 10 + j;
        t.image_id = scene.image_id;
        t.split = split;
        const std::vector<std::string>* pool = nullptr;
        if (kind == 0) {
          t.question = "How many " + phrase_plural(name) + " are there?";
          t.answer = std::to_string(n_subject);
          t.answer_type = AnswerType::number;
          pool = &numbers;
        } else if (kind == 1) {
          const auto& obj = *std::find_if(scene.objects.begin(), scene.objects.end(),
                                          [&](const auto& o) { return o.category == subject; });
          t.question = "What color is the " + name + "?";
          t.answer = spec.colors[obj.color];
          t.answer_type = AnswerType::other;
          pool = &spec.colors;
        } else {
          t.question = "Is there " + article(name) + " " + name + "?";
          t.answer = n_subject > 0 ? "yes" : "no";
          t.answer_type = AnswerType::yes_no;
          pool = &yes_no;
        }
        for (std::size_t h = 0; h < spec.human_answers; ++h) {
          std::string a = t.answer;
          if (std::bernoulli_distribution(spec.human_error)(rng)) {
            std::size_t k = pick(pool->size() - 1, rng);
            if ((*pool)[k] == t.answer) k = pool->size() - 1;
            a = (*pool)[k];
          }
          t.answers.push_back(std::move(a));
        }
        const bool is_unknown =
            unknown_scene || std::find(unknown.begin(), unknown.end(), subject) != unknown.end();
        auto& dst = train ? (is_unknown ? corpus.truth.testset : corpus.truth.trainset)
                          : (is_unknown ? corpus.truth.valset_unknown : corpus.truth.valset_known);
        dst.push_back(t.question_id);
        corpus.triplets.push_back(std::move(t));
      }
      corpus.scenes.push_back(std::move(scene));
    }
  }
  for (auto* list : {&corpus.truth.trainset, &corpus.truth.testset, &corpus.truth.valset_known,
                     &corpus.truth.valset_unknown}) {
    std::sort(list->begin(), list->end());
  }

  // The planted unknowns must be the rarest category of their group,
  // otherwise the truth manifest would disagree with the selection rule.
  std::vector<std::uint64_t> images(spec.categories.size()), instances(spec.categories.size());
  for (const auto& scene : corpus.scenes) {
    std::set<std::size_t> seen;
    for (const auto& o : scene.objects) {
      ++instances[o.category];
      if (seen.insert(o.category).second) ++images[o.category];
    }
  }
  for (auto u : unknown) {
    const auto nu = images[u] * instances[u];
    for (std::size_t c = 0; c < spec.categories.size(); ++c) {
      if (c == u || spec.categories[c].supercategory != spec.categories[u].supercategory) continue;
      const auto nc = images[c] * instances[c];
      if (nc < nu || (nc == nu && spec.categories[c].name < spec.categories[u].name)) {
        throw DataError("toy corpus: planted unknown " + spec.categories[u].name +
                        " is not the rarest in its supercategory; lower unknown_scene_rate");
      }
    }
  }

  corpus.truth.stats = {{"counts",
                         {{"trainset", corpus.truth.trainset.size()},
                          {"testset", corpus.truth.testset.size()},
                          {"valset_known", corpus.truth.valset_known.size()},
                          {"valset_unknown", corpus.truth.valset_unknown.size()}}}};
  corpus.truth.provenance = {{"generator", "toy"}, {"seed", spec.seed}, {"tool_version", kToolVersion}};
  return corpus;
}

VisualFeatures encode_scene(const ToyScene& scene, const ToySpec& spec,
                            std::optional<std::uint64_t> noise_seed) {
  const auto supers = spec.supercategories();
  const std::size_t C = spec.categories.size(), S = supers.size(), K = spec.colors.size();
  const std::size_t nv = spec.channels();
  Tensor grid = Tensor::zeros({spec.cells(), nv});
  for (const auto& o : scene.objects) {
    const auto& super = spec.categories[o.category].supercategory;
    const auto s = static_cast<std::size_t>(
        std::lower_bound(supers.begin(), supers.end(), super) - supers.begin());
    grid.at(o.cell, o.category) = 1.0;
    grid.at(o.cell, C + s) = 1.0;
    grid.at(o.cell, C + S + o.color) = 1.0;
    grid.at(o.cell, C + S + K) = 1.0;
  }
  if (noise_seed && spec.noise > 0.0) {
    std::mt19937_64 rng(*noise_seed);
    std::normal_distribution<double> n(0.0, spec.noise);
    for (auto& v : grid.data) v += n(rng);
  }
  // Values are stored as f32 on disk; round here so in-memory and loaded
  // scenes agree exactly.
  for (auto& v : grid.data) v = static_cast<double>(static_cast<float>(v));
  Tensor pooled = Tensor::zeros({1, nv});
  for (std::size_t g = 0; g < spec.cells(); ++g) {
    for (std::size_t c = 0; c < nv; ++c) pooled.data[c] += grid.at(g, c);
  }
  for (auto& v : pooled.data) {
    v = static_cast<double>(static_cast<float>(v / static_cast<double>(spec.cells())));
  }
  return VisualFeatures{std::move(grid), std::move(pooled)};
}

std::string oracle_answer(const Tensor& grid, const std::string& question, const ToySpec& spec) {
  const std::size_t C = spec.categories.size(), K = spec.colors.size();
  const std::size_t S = spec.supercategories().size();
  if (grid.rank() != 2 || grid.dim(1) != spec.channels()) {
    throw std::invalid_argument("oracle_answer: grid does not match the toy spec");
  }
  struct Seen {
    std::size_t category, color;
  };
  std::vector<Seen> seen;
  for (std::size_t g = 0; g < grid.dim(0); ++g) {
    if (grid.at(g, C + S + K) < 0.5) continue;
    std::size_t cat = 0, col = 0;
    for (std::size_t c = 1; c < C; ++c) {
      if (grid.at(g, c) > grid.at(g, cat)) cat = c;
    }
    for (std::size_t k = 1; k < K; ++k) {
      if (grid.at(g, C + S + k) > grid.at(g, C + S + col)) col = k;
    }
    seen.push_back({cat, col});
  }
  const auto tokens = normalize_tokens(question);
  auto join = [&](std::size_t from, std::size_t to) {
    std::string s;
    for (std::size_t i = from; i < to; ++i) s += (i > from ? " " : "") + tokens[i];
    return s;
  };
  auto category_named = [&](const std::string& phrase, bool plural) -> std::size_t {
    for (std::size_t c = 0; c < C; ++c) {
      const auto& n = spec.categories[c].name;
      if ((plural ? phrase_plural(n) : n) == phrase) return c;
    }
    throw std::invalid_argument("oracle_answer: no category named '" + phrase + "'");
  };
  auto count = [&](std::size_t cat) {
    return static_cast<std::size_t>(
        std::count_if(seen.begin(), seen.end(), [&](const auto& s) { return s.category == cat; }));
  };
  const std::size_t n = tokens.size();
  if (n >= 4 && tokens[0] == "how" && tokens[1] == "many") {
    return std::to_string(count(category_named(join(2, n - 2), true)));
  }
  if (n >= 5 && tokens[0] == "what" && tokens[1] == "color") {
    const auto cat = category_named(join(4, n), false);
    for (const auto& s : seen) {
      if (s.category == cat) return spec.colors[s.color];
    }
    throw std::invalid_argument("oracle_answer: asked for the color of an absent object");
  }
  if (n >= 4 && tokens[0] == "is" && tokens[1] == "there") {
    return count(category_named(join(3, n), false)) > 0 ? "yes" : "no";
  }
  throw std::invalid_argument("oracle_answer: unrecognized question '" + question + "'");
}

std::uint64_t toy_noise_seed(std::uint64_t seed, std::int64_t image_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(image_id), static_cast<std::uint32_t>(image_id >> 32)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

std::filesystem::path feature_path(const std::filesystem::path& features_dir, std::int64_t image_id) {
  return features_dir / (std::to_string(image_id) + ".jexf");
}

void write_toy(const ToyCorpus& corpus, const std::filesystem::path& dir) {
  const auto& spec = corpus.spec;
  std::filesystem::create_directories(dir / "features");
  json categories = json::array();
  for (std::size_t c = 0; c < spec.categories.size(); ++c) {
    categories.push_back({{"id", c + 1},
                          {"name", spec.categories[c].name},
                          {"supercategory", spec.categories[c].supercategory}});
  }
  std::uint64_t annotation_id = 1;
  for (SourceSplit split : {SourceSplit::train, SourceSplit::val}) {
    const std::string tag = split == SourceSplit::train ? "train" : "val";
    json images = json::array(), annotations = json::array();
    for (const auto& scene : corpus.scenes) {
      if (scene.split != split) continue;
      images.push_back({{"id", scene.image_id},
                        {"file_name", std::to_string(scene.image_id) + ".jexf"},
                        {"width", spec.grid_side},
                        {"height", spec.grid_side}});
      for (const auto& o : scene.objects) {
        annotations.push_back({{"id", annotation_id++},
                               {"image_id", scene.image_id},
                               {"category_id", o.category + 1},
                               {"cell", o.cell},
                               {"color", spec.colors[o.color]}});
      }
      save_features(feature_path(dir / "features", scene.image_id),
                    encode_scene(scene, spec, toy_noise_seed(spec.seed, scene.image_id)));
    }
    write_json(dir / ("instances_" + tag + ".json"),
               {{"images", images}, {"annotations", annotations}, {"categories", categories}});

    json qs = json::array(), as = json::array();
    for (const auto& t : corpus.triplets) {
      if (t.split != split) continue;
      qs.push_back({{"question_id", t.question_id}, {"image_id", t.image_id}, {"question", t.question}});
      json answers = json::array();
      for (std::size_t h = 0; h < t.answers.size(); ++h) {
        answers.push_back({{"answer", t.answers[h]}, {"answer_id", h + 1}});
      }
      as.push_back({{"question_id", t.question_id},
                    {"image_id", t.image_id},
                    {"answer_type", answer_type_name(t.answer_type)},
                    {"multiple_choice_answer", t.answer},
                    {"answers", answers}});
    }
    write_json(dir / ("questions_" + tag + ".json"), {{"data_subtype", tag}, {"questions", qs}});
    write_json(dir / ("annotations_" + tag + ".json"), {{"data_subtype", tag}, {"annotations", as}});
  }
  corpus.truth.save(dir / "truth_manifest.json");
}

}  // namespace jex
