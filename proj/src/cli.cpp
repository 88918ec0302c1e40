#include "jex/cli.hpp"

#include <algorithm>
#include <filesystem>
#include <optional>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "jex/error.hpp"
#include "jex/fusion.hpp"
#include "jex/model.hpp"
#include "jex/owsplit.hpp"
#include "jex/toycorpus.hpp"
#include "jex/training.hpp"

namespace jex::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
};

struct TripletFiles {
  std::vector<std::string> questions;
  std::vector<std::string> annotations;
};

struct TrainFlags {
  std::string preset = "full";
  std::optional<double> learning_rate;
  std::optional<std::size_t> batch_size;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> stage2_epochs;
  std::optional<double> sample_rate;
};

void require_file(const std::string& path) {
  if (!fs::is_regular_file(path)) throw DataError("input file not found: " + path);
}

void require_dir(const std::string& path) {
  if (!fs::is_directory(path)) throw DataError("input directory not found: " + path);
}

std::vector<std::string> basenames(const std::vector<std::string>& paths) {
  std::vector<std::string> out;
  for (const auto& p : paths) out.push_back(fs::path(p).filename().string());
  return out;
}

json config_section(const Globals& g, const char* section) {
  if (g.config.empty()) return json::object();
  require_file(g.config);
  json doc = read_json(g.config);
  if (!doc.is_object()) throw DataError("config file must hold a JSON object");
  for (const auto& [key, value] : doc.items()) {
    if (key != "train" && key != "toy") throw DataError("config file: unknown section '" + key + "'");
  }
  return doc.contains(section) ? doc.at(section) : json::object();
}

TrainConfig train_config(const Globals& g, const TrainFlags& f, bool seed_given) {
  TrainConfig c;
  if (f.preset == "toy") c = TrainConfig::toy();
  else if (f.preset != "full") throw UsageError("unknown preset '" + f.preset + "'");
  c = TrainConfig::from_json(config_section(g, "train"), c);
  if (f.learning_rate) c.learning_rate = *f.learning_rate;
  if (f.batch_size) c.batch_size = *f.batch_size;
  if (f.epochs) c.epochs = *f.epochs;
  if (f.stage2_epochs) c.stage2_epochs = *f.stage2_epochs;
  if (f.sample_rate) c.sample_rate = *f.sample_rate;
  if (seed_given) c.seed = g.seed;
  c.validate();
  return c;
}

std::vector<IqaTriplet> load_all(const TripletFiles& files) {
  if (files.questions.size() != files.annotations.size()) {
    throw UsageError("--questions and --annotations must be given the same number of times");
  }
  std::vector<IqaTriplet> all;
  for (std::size_t i = 0; i < files.questions.size(); ++i) {
    auto part = load_triplets(fs::path(files.questions[i]), fs::path(files.annotations[i]));
    all.insert(all.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
  }
  return all;
}

void add_triplet_flags(CLI::App& sub, TripletFiles& files) {
  sub.add_option("--questions", files.questions, "VQA-style questions JSON (repeatable)")->required();
  sub.add_option("--annotations", files.annotations, "VQA-style annotations JSON (repeatable)")->required();
}

void add_train_flags(CLI::App& sub, TrainFlags& f) {
  sub.add_option("--preset", f.preset, "full (default dimensions) or toy");
  sub.add_option("--lr", f.learning_rate, "learning rate");
  sub.add_option("--batch-size", f.batch_size, "mini-batch size");
  sub.add_option("--epochs", f.epochs, "stage-1 epochs");
  sub.add_option("--stage2-epochs", f.stage2_epochs, "stage-2 epochs");
  sub.add_option("--sample-rate", f.sample_rate, "fraction of training embeddings stored");
}

void emit(const json& j, const std::string& out_path, std::ostream& out) {
  if (!out_path.empty()) write_json(out_path, j);
  out << j.dump(2) << '\n';
}

json stage_json(const StageResult& r) {
  return {{"epoch_loss", r.epoch_loss},
          {"examples", r.examples},
          {"attention",
           {{"maps", r.audit.maps},
            {"maps_per_epoch", r.audit.maps_per_epoch},
            {"max_sum_error", r.audit.max_sum_error},
            {"min_weight", r.audit.min_weight}}}};
}

const std::vector<std::uint64_t>& split_ids(const SplitManifest& m, const std::string& name) {
  if (name == "trainset") return m.trainset;
  if (name == "testset") return m.testset;
  if (name == "valset_known") return m.valset_known;
  if (name == "valset_unknown") return m.valset_unknown;
  throw UsageError("unknown split '" + name + "'");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Visual question answering with exemplar retrieval"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  Globals g;
  app.add_option("--seed", g.seed, "random seed")->capture_default_str();
  app.add_option("--config", g.config, "JSON config overlay ({\"train\": {...}, \"toy\": {...}}); flags win");
  app.add_option("--out", g.out, "output file or directory");

  // split
  auto* split = app.add_subcommand("split", "derive the known/unknown split");
  std::vector<std::string> instances;
  TripletFiles split_files;
  std::string lexicon;
  split->add_option("--instances", instances, "COCO-style instances JSON (repeatable)")->required();
  add_triplet_flags(*split, split_files);
  split->add_option("--lexicon", lexicon, "synonym lexicon JSON");

  // gen-toy
  auto* gen = app.add_subcommand("gen-toy", "write a synthetic corpus");
  std::optional<std::size_t> train_scenes, val_scenes;
  gen->add_option("--train-scenes", train_scenes, "scenes in the train split");
  gen->add_option("--val-scenes", val_scenes, "scenes in the val split");

  // train
  auto* train = app.add_subcommand("train", "two-stage training");
  std::string manifest_path, features_dir, stage = "both", checkpoint_path, store_path;
  TripletFiles train_files;
  TrainFlags train_flags;
  train->add_option("--manifest", manifest_path, "split manifest")->required();
  train->add_option("--features", features_dir, "feature directory")->required();
  add_triplet_flags(*train, train_files);
  train->add_option("--stage", stage, "1, 2 or both")->check(CLI::IsMember({"1", "2", "both"}));
  train->add_option("--checkpoint", checkpoint_path, "stage-1 checkpoint (stage 2 only)");
  train->add_option("--store", store_path, "stage-1 exemplar store (stage 2 only)");
  add_train_flags(*train, train_flags);

  // build-store
  auto* bstore = app.add_subcommand("build-store", "store joint embeddings of a grid model");
  TripletFiles store_files;
  TrainFlags store_flags;
  bstore->add_option("--checkpoint", checkpoint_path, "grid checkpoint")->required();
  bstore->add_option("--manifest", manifest_path, "split manifest")->required();
  bstore->add_option("--features", features_dir, "feature directory")->required();
  add_triplet_flags(*bstore, store_files);
  add_train_flags(*bstore, store_flags);
  std::size_t key_length = kDefaultKeyLength;
  bstore->add_option("--key-length", key_length, "soft-key length");

  // eval
  auto* eval = app.add_subcommand("eval", "score a checkpoint on manifest splits");
  TripletFiles eval_files;
  std::vector<std::string> splits;
  std::string mode = "exact";
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint")->required();
  eval->add_option("--store", store_path, "exemplar store (jex checkpoints)");
  eval->add_option("--manifest", manifest_path, "split manifest")->required();
  eval->add_option("--features", features_dir, "feature directory")->required();
  eval->add_option("--split", splits, "split name (repeatable)")->required();
  eval->add_option("--mode", mode, "exact or consensus")->check(CLI::IsMember({"exact", "consensus"}));
  add_triplet_flags(*eval, eval_files);

  // answer
  auto* answer = app.add_subcommand("answer", "answer one question about one feature file");
  std::string feature_file, question;
  answer->add_option("--checkpoint", checkpoint_path, "checkpoint")->required();
  answer->add_option("--store", store_path, "exemplar store (jex checkpoints)");
  answer->add_option("--features", feature_file, "feature file")->required();
  answer->add_option("--question", question, "question text")->required();

  // param-count
  auto* pc = app.add_subcommand("param-count", "fusion parameter counts");
  std::uint64_t n_q = 2400, n_v = 2048, n_e = 2000, t_q = 310, t_v = 310, t_e = 510;
  pc->add_option("--nq", n_q)->capture_default_str();
  pc->add_option("--nv", n_v)->capture_default_str();
  pc->add_option("--ne", n_e)->capture_default_str();
  pc->add_option("--tq", t_q)->capture_default_str();
  pc->add_option("--tv", t_v)->capture_default_str();
  pc->add_option("--te", t_e)->capture_default_str();

  for (auto* sub : {split, gen, train, bstore, eval, answer, pc}) {
    sub->add_option("--seed", g.seed, "random seed");
    sub->add_option("--config", g.config, "JSON config overlay");
    sub->add_option("--out", g.out, "output file or directory");
  }

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  auto seed_given = [&](CLI::App* sub) {
    return sub->get_option("--seed")->count() > 0 || app.get_option("--seed")->count() > 0;
  };

  try {
    if (*split) {
      for (const auto& p : instances) require_file(p);
      for (const auto& p : split_files.questions) require_file(p);
      for (const auto& p : split_files.annotations) require_file(p);
      if (!lexicon.empty()) require_file(lexicon);
      if (g.out.empty()) throw UsageError("split: --out is required");

      InstanceIndex index;
      for (const auto& p : instances) index.add_file(p);
      const auto stats = category_stats(index);
      const auto unknown = select_unknown(stats);
      const auto lex = lexicon.empty() ? SynonymLexicon::defaults(index.categories())
                                       : SynonymLexicon::with_overrides(index.categories(), read_json(lexicon));
      const auto triplets = load_all(split_files);
      SplitManifest m = split_triplets(triplets, index, unknown, lex);
      m.provenance = {{"instances", basenames(instances)},
                      {"questions", basenames(split_files.questions)},
                      {"annotations", basenames(split_files.annotations)},
                      {"lexicon", lexicon.empty() ? json(nullptr) : json(fs::path(lexicon).filename().string())},
                      {"seed", g.seed},
                      {"tool_version", kToolVersion}};
      m.save(g.out);
      out << json{{"manifest", g.out}, {"unknown_categories", m.unknown_categories},
                  {"counts", m.stats.at("counts")}}.dump(2)
          << '\n';
      return kOk;
    }

    if (*gen) {
      if (g.out.empty()) throw UsageError("gen-toy: --out is required");
      ToySpec spec = ToySpec::from_json(config_section(g, "toy"), ToySpec{});
      if (seed_given(gen)) spec.seed = g.seed;
      if (train_scenes) spec.train_scenes = *train_scenes;
      if (val_scenes) spec.val_scenes = *val_scenes;
      const auto corpus = generate_toy(spec);
      write_toy(corpus, g.out);
      write_json(fs::path(g.out) / "toy_spec.json", spec.to_json());
      out << json{{"out", g.out}, {"scenes", corpus.scenes.size()}, {"triplets", corpus.triplets.size()},
                  {"unknown_categories", corpus.truth.unknown_categories}}.dump(2)
          << '\n';
      return kOk;
    }

    if (*train) {
      require_file(manifest_path);
      require_dir(features_dir);
      for (const auto& p : train_files.questions) require_file(p);
      for (const auto& p : train_files.annotations) require_file(p);
      if (stage == "2") {
        if (checkpoint_path.empty() || store_path.empty()) {
          throw UsageError("train --stage 2 needs --checkpoint and --store from stage 1");
        }
        require_file(checkpoint_path);
        require_file(store_path);
      }
      if (g.out.empty()) throw UsageError("train: --out is required");
      const TrainConfig config = train_config(g, train_flags, seed_given(train));
      const auto manifest = SplitManifest::load(manifest_path);
      const auto all = load_all(train_files);
      const auto trainset = select_triplets(all, manifest.trainset);
      FeatureCache features(features_dir);
      fs::create_directories(g.out);
      const fs::path dir(g.out);

      json report = {{"config", config.to_json()}, {"stage", stage}};
      Model grid_model;
      ExemplarStore store;
      if (stage == "1" || stage == "both") {
        auto s1 = stage1_train(trainset, features, config);
        save_checkpoint(s1.model, dir / "grid.jexm");
        save_store(s1.store, dir / "store.jexs");
        report["stage1"] = stage_json(s1);
        report["store"] = {{"size", s1.store.size()}, {"key_length", s1.store.key_length()}};
        grid_model = std::move(s1.model);
        store = std::move(s1.store);
      } else {
        grid_model = load_checkpoint(checkpoint_path);
        store = load_store(store_path);
      }
      if (stage == "2" || stage == "both") {
        auto s2 = stage2_train(grid_model, store, trainset, features, config);
        save_checkpoint(s2.model, dir / "jex.jexm");
        report["stage2"] = stage_json(s2);
      }
      emit(report, (dir / "train_metrics.json").string(), out);
      return kOk;
    }

    if (*bstore) {
      require_file(checkpoint_path);
      require_file(manifest_path);
      require_dir(features_dir);
      if (g.out.empty()) throw UsageError("build-store: --out is required");
      TrainConfig config = train_config(g, store_flags, seed_given(bstore));
      if (bstore->get_option("--key-length")->count() > 0) config.key_length = key_length;
      const Model model = load_checkpoint(checkpoint_path);
      const auto manifest = SplitManifest::load(manifest_path);
      const auto all = load_all(store_files);
      const auto trainset = select_triplets(all, manifest.trainset);
      FeatureCache features(features_dir);
      const auto store = build_exemplars(model, trainset, features, config);
      save_store(store, g.out);
      out << json{{"store", g.out}, {"size", store.size()}, {"key_length", store.key_length()}}.dump(2) << '\n';
      return kOk;
    }

    if (*eval) {
      require_file(checkpoint_path);
      require_file(manifest_path);
      require_dir(features_dir);
      if (!store_path.empty()) require_file(store_path);
      const Model model = load_checkpoint(checkpoint_path);
      if (model.params.config.variant == Variant::jex && store_path.empty()) {
        throw DataError("eval: jex checkpoints need --store");
      }
      std::optional<ExemplarStore> store;
      if (!store_path.empty()) store = load_store(store_path);
      const auto manifest = SplitManifest::load(manifest_path);
      const auto all = load_all(eval_files);
      FeatureCache features(features_dir);
      json reports = json::array();
      for (const auto& name : splits) {
        const auto triplets = select_triplets(all, split_ids(manifest, name));
        reports.push_back(evaluate(model, store ? &*store : nullptr, triplets, features,
                                   parse_score_mode(mode), name)
                              .to_json());
      }
      emit({{"checkpoint", fs::path(checkpoint_path).filename().string()},
            {"mode", mode},
            {"reports", reports}},
           g.out, out);
      return kOk;
    }

    if (*answer) {
      require_file(checkpoint_path);
      require_file(feature_file);
      if (!store_path.empty()) require_file(store_path);
      Model model = load_checkpoint(checkpoint_path);
      const bool jex = model.params.config.variant == Variant::jex;
      if (jex && store_path.empty()) throw DataError("answer: jex checkpoints need --store");
      std::optional<ExemplarStore> store;
      if (jex) store = load_store(store_path);
      const auto features = load_features(feature_file);
      const auto tokens = model.encode_question(question);
      Tape tape;
      const auto pass = forward_model(tape, model.params, features, tokens, store ? &*store : nullptr);
      json j = {{"answer", predict(pass.logits.value().data, model.answers)},
                {"variant", variant_name(model.params.config.variant)},
                {"alpha_iq", pass.alpha_iq}};
      if (jex) {
        j["alpha_e"] = pass.alpha_e;
        j["exemplar_id"] = *pass.exemplar_id;
      }
      emit(j, g.out, out);
      return kOk;
    }

    if (*pc) {
      const auto c = param_count(n_q, n_v, n_e, t_q, t_v, t_e);
      emit({{"n_q", n_q}, {"n_v", n_v}, {"n_e", n_e}, {"t_q", t_q}, {"t_v", t_v}, {"t_e", t_e},
            {"naive", c.naive}, {"tucker", c.tucker}},
           g.out, out);
      return kOk;
    }
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace jex::cli
