#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "jex/answers.hpp"

namespace jex {

inline constexpr const char* kToolVersion = "jex 0.1.0";
inline constexpr std::size_t kDefaultAnswerCount = 2000;

struct Category {
  std::int64_t id = 0;
  std::string name;
  std::string supercategory;
};

// Per-category occurrence: distinct images (N_i), instances (N_t) and
// their product N.
struct CategoryStats {
  Category category;
  std::uint64_t images = 0;
  std::uint64_t instances = 0;
  std::uint64_t occurrence() const { return images * instances; }
};

// Union of one or more COCO-style instance files.
class InstanceIndex {
 public:
  void add(const nlohmann::json& instances, const std::string& source = "<json>");
  void add_file(const std::filesystem::path& path);

  const std::map<std::int64_t, Category>& categories() const { return categories_; }
  bool has_image(std::int64_t image_id) const { return images_.count(image_id) != 0; }
  // Category ids with at least one instance in the image.
  const std::set<std::int64_t>& categories_in(std::int64_t image_id) const;
  std::size_t image_count() const { return images_.size(); }

  std::vector<CategoryStats> stats() const;

 private:
  std::map<std::int64_t, Category> categories_;
  std::set<std::int64_t> images_;
  std::unordered_map<std::int64_t, std::set<std::int64_t>> image_categories_;
  std::map<std::int64_t, std::uint64_t> instance_counts_;
};

std::vector<CategoryStats> category_stats(const InstanceIndex& index);

// Minimal-occurrence category of every supercategory except "person"; ties
// go to the lexicographically smaller name. Ordered by supercategory.
std::vector<CategoryStats> select_unknown(std::span<const CategoryStats> stats);

enum class SourceSplit { train, val };
enum class AnswerType { yes_no, number, other };

std::string_view answer_type_name(AnswerType t);
AnswerType parse_answer_type(std::string_view label);

struct IqaTriplet {
  std::uint64_t question_id = 0;
  std::int64_t image_id = 0;
  std::string question;
  std::vector<std::string> answers;  // human answers
  std::string answer;                // consensus (multiple-choice) answer
  AnswerType answer_type = AnswerType::other;
  SourceSplit split = SourceSplit::train;
};

// VQA-style questions + annotations pair. The split comes from the
// "data_subtype" field ("train*" or "val*").
std::vector<IqaTriplet> load_triplets(const nlohmann::json& questions,
                                      const nlohmann::json& annotations);
std::vector<IqaTriplet> load_triplets(const std::filesystem::path& questions,
                                      const std::filesystem::path& annotations);

// Category name -> lowercase match phrases.
class SynonymLexicon {
 public:
  // Each category's name plus its naive plural.
  static SynonymLexicon defaults(const std::map<std::int64_t, Category>& categories);
  // Defaults extended with {"category": ["phrase", ...]} entries.
  static SynonymLexicon with_overrides(const std::map<std::int64_t, Category>& categories,
                                       const nlohmann::json& extra);

  void add(const std::string& category, const std::string& phrase);
  const std::vector<std::vector<std::string>>& phrases(const std::string& category) const;
  bool contains(const std::string& category) const { return phrases_.count(category) != 0; }

 private:
  std::map<std::string, std::vector<std::vector<std::string>>> phrases_;
};

std::string naive_plural(const std::string& name);

// True when `phrase` occurs as a contiguous token run of `tokens`.
bool contains_phrase(std::span<const std::string> tokens, std::span<const std::string> phrase);

struct SplitManifest {
  std::vector<std::string> unknown_categories;
  std::vector<std::uint64_t> trainset;
  std::vector<std::uint64_t> testset;
  std::vector<std::uint64_t> valset_known;
  std::vector<std::uint64_t> valset_unknown;
  nlohmann::json stats = nlohmann::json::object();
  nlohmann::json provenance = nlohmann::json::object();

  // Same unknown categories and id lists.
  bool same_split(const SplitManifest& other) const;
  std::size_t total() const;

  nlohmann::json to_json() const;
  static SplitManifest from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static SplitManifest load(const std::filesystem::path& path);
};

// Why a triplet is Unknown, if it is.
struct UnknownReason {
  bool visual = false;    // image holds an unknown instance
  bool semantic = false;  // question names an unknown category
  bool unknown() const { return visual || semantic; }
};

UnknownReason classify_triplet(const IqaTriplet& triplet, const InstanceIndex& index,
                               const std::set<std::int64_t>& unknown_ids,
                               const SynonymLexicon& lexicon,
                               const std::vector<std::string>& unknown_names);

SplitManifest split_triplets(std::span<const IqaTriplet> triplets, const InstanceIndex& index,
                             std::span<const CategoryStats> unknown, const SynonymLexicon& lexicon);

// Top `size` consensus answers by frequency (ties lexicographic).
AnswerDictionary build_answer_dict(std::span<const IqaTriplet> trainset,
                                   std::size_t size = kDefaultAnswerCount);

// Most frequent human answer (ties lexicographic); the consensus answer
// when no human answers are listed.
std::string majority_answer(const IqaTriplet& triplet);

nlohmann::json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace jex
