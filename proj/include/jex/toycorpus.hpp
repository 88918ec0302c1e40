#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "jex/encoders.hpp"
#include "jex/owsplit.hpp"

namespace jex {

struct ToyCategory {
  std::string name;
  std::string supercategory;
};

struct ToySpec {
  std::size_t grid_side = 4;  // G = grid_side^2
  std::vector<ToyCategory> categories = {
      {"person", "person"}, {"car", "vehicle"}, {"bus", "vehicle"},   {"train", "vehicle"},
      {"airplane", "vehicle"}, {"dog", "animal"}, {"cat", "animal"}, {"horse", "animal"}};
  std::vector<std::string> colors = {"red", "green", "blue", "yellow"};
  std::vector<std::string> unknown = {"airplane", "horse"};
  std::size_t train_scenes = 600;
  std::size_t val_scenes = 300;
  std::size_t questions_per_scene = 3;
  std::size_t max_objects = 3;
  double unknown_scene_rate = 0.14;  // scenes holding one unknown object
  double semantic_rate = 0.02;       // known-scene questions naming an unknown category
  double noise = 0.05;
  std::size_t human_answers = 10;
  double human_error = 0.1;  // chance each human answer is a wrong one of the same type
  std::uint64_t seed = 0;

  std::size_t cells() const { return grid_side * grid_side; }
  std::vector<std::string> supercategories() const;  // sorted, distinct
  // category one-hot, supercategory one-hot, color one-hot, occupancy
  std::size_t channels() const {
    return categories.size() + supercategories().size() + colors.size() + 1;
  }
  void validate() const;
  nlohmann::json to_json() const;
  // Keys present in `overlay` replace the matching fields of `base`.
  static ToySpec from_json(const nlohmann::json& overlay, ToySpec base);
};

struct ToyObject {
  std::size_t category = 0;
  std::size_t color = 0;
  std::size_t cell = 0;
};

struct ToyScene {
  std::int64_t image_id = 0;
  SourceSplit split = SourceSplit::train;
  std::vector<ToyObject> objects;
};

struct ToyCorpus {
  ToySpec spec;
  std::vector<ToyScene> scenes;
  std::vector<IqaTriplet> triplets;
  SplitManifest truth;  // built from generation-time knowledge
};

// Deterministic for a given spec (including its seed).
ToyCorpus generate_toy(const ToySpec& spec);

// Scene encoding; `noise_seed` adds N(0, spec.noise) per value, none if empty.
VisualFeatures encode_scene(const ToyScene& scene, const ToySpec& spec,
                            std::optional<std::uint64_t> noise_seed = {});

// Per-scene noise seed used for the written feature files.
std::uint64_t toy_noise_seed(std::uint64_t seed, std::int64_t image_id);

// Answers a generated question by reading a noiseless grid.
std::string oracle_answer(const Tensor& grid, const std::string& question, const ToySpec& spec);

// Layout under `dir`:
//   features/<image_id>.jexf
//   instances_train.json, instances_val.json
//   questions_train.json, annotations_train.json,
//   questions_val.json, annotations_val.json
//   truth_manifest.json
void write_toy(const ToyCorpus& corpus, const std::filesystem::path& dir);

std::filesystem::path feature_path(const std::filesystem::path& features_dir, std::int64_t image_id);

}  // namespace jex
