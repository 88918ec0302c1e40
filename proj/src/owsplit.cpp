#include "jex/owsplit.hpp"

#include <algorithm>
#include <fstream>
#include <unordered_set>

#include "jex/encoders.hpp"
#include "jex/error.hpp"

namespace jex {

using nlohmann::json;

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  try {
    return json::parse(is);
  } catch (const json::exception& e) {
    throw DataError("malformed JSON in " + path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
  if (!os) throw DataError("write failed for " + path.string());
}

namespace {

const json& field(const json& obj, const char* key, const std::string& source) {
  if (!obj.is_object() || !obj.contains(key)) {
    throw DataError(source + ": missing field '" + key + "'");
  }
  return obj.at(key);
}

template <typename T>
T as(const json& v, const char* key, const std::string& source) {
  try {
    return v.get<T>();
  } catch (const json::exception&) {
    throw DataError(source + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

void InstanceIndex::add(const json& doc, const std::string& source) {
  const auto& cats = field(doc, "categories", source);
  const auto& imgs = field(doc, "images", source);
  const auto& anns = field(doc, "annotations", source);
  if (!cats.is_array() || !imgs.is_array() || !anns.is_array()) {
    throw DataError(source + ": categories, images and annotations must be arrays");
  }
  for (const auto& c : cats) {
    Category cat{as<std::int64_t>(field(c, "id", source), "id", source),
                 as<std::string>(field(c, "name", source), "name", source),
                 as<std::string>(field(c, "supercategory", source), "supercategory", source)};
    auto [it, inserted] = categories_.emplace(cat.id, cat);
    if (!inserted && (it->second.name != cat.name || it->second.supercategory != cat.supercategory)) {
      throw DataError(source + ": category id " + std::to_string(cat.id) +
                      " conflicts with an earlier file");
    }
  }
  for (const auto& im : imgs) images_.insert(as<std::int64_t>(field(im, "id", source), "id", source));
  for (const auto& a : anns) {
    const auto image = as<std::int64_t>(field(a, "image_id", source), "image_id", source);
    const auto cat = as<std::int64_t>(field(a, "category_id", source), "category_id", source);
    if (!categories_.count(cat)) {
      throw DataError(source + ": annotation references unknown category id " + std::to_string(cat));
    }
    if (!images_.count(image)) {
      throw DataError(source + ": annotation references unknown image id " + std::to_string(image));
    }
    image_categories_[image].insert(cat);
    ++instance_counts_[cat];
  }
}

void InstanceIndex::add_file(const std::filesystem::path& path) { add(read_json(path), path.string()); }

const std::set<std::int64_t>& InstanceIndex::categories_in(std::int64_t image_id) const {
  static const std::set<std::int64_t> kNone;
  auto it = image_categories_.find(image_id);
  return it == image_categories_.end() ? kNone : it->second;
}

std::vector<CategoryStats> InstanceIndex::stats() const {
  std::map<std::int64_t, std::uint64_t> image_counts;
  for (const auto& [image, cats] : image_categories_) {
    for (auto c : cats) ++image_counts[c];
  }
  std::vector<CategoryStats> out;
  for (const auto& [id, cat] : categories_) {
    CategoryStats s{cat};
    if (auto it = image_counts.find(id); it != image_counts.end()) s.images = it->second;
    if (auto it = instance_counts_.find(id); it != instance_counts_.end()) s.instances = it->second;
    out.push_back(s);
  }
  return out;
}

std::vector<CategoryStats> category_stats(const InstanceIndex& index) { return index.stats(); }

std::vector<CategoryStats> select_unknown(std::span<const CategoryStats> stats) {
  std::map<std::string, std::vector<const CategoryStats*>> groups;
  for (const auto& s : stats) {
    if (s.category.supercategory.empty()) {
      throw DataError("category '" + s.category.name + "' has no supercategory");
    }
    groups[s.category.supercategory].push_back(&s);
  }
  std::vector<CategoryStats> out;
  for (const auto& [super, members] : groups) {
    if (super == "person") continue;
    if (members.empty()) throw DataError("empty supercategory group " + super);
    const CategoryStats* best = members.front();
    for (const auto* m : members) {
      if (m->occurrence() < best->occurrence() ||
          (m->occurrence() == best->occurrence() && m->category.name < best->category.name)) {
        best = m;
      }
    }
    out.push_back(*best);
  }
  return out;
}

std::string_view answer_type_name(AnswerType t) {
  switch (t) {
    case AnswerType::yes_no: return "yes/no";
    case AnswerType::number: return "number";
    case AnswerType::other: return "other";
  }
  return "other";
}

AnswerType parse_answer_type(std::string_view label) {
  if (label == "yes/no") return AnswerType::yes_no;
  if (label == "number") return AnswerType::number;
  if (label == "other") return AnswerType::other;
  throw DataError("unknown answer-type label '" + std::string(label) + "'");
}

namespace {

SourceSplit split_of(const json& doc, const std::string& source) {
  const auto subtype = as<std::string>(field(doc, "data_subtype", source), "data_subtype", source);
  if (subtype.rfind("train", 0) == 0) return SourceSplit::train;
  if (subtype.rfind("val", 0) == 0) return SourceSplit::val;
  throw DataError(source + ": data_subtype '" + subtype + "' is neither train nor val");
}

}  // namespace

std::vector<IqaTriplet> load_triplets(const json& questions, const json& annotations) {
  const std::string qsrc = "questions", asrc = "annotations";
  const auto split = split_of(questions, qsrc);
  if (split_of(annotations, asrc) != split) {
    throw DataError("questions and annotations come from different splits");
  }
  std::unordered_map<std::uint64_t, const json*> by_id;
  for (const auto& a : field(annotations, "annotations", asrc)) {
    const auto qid = as<std::uint64_t>(field(a, "question_id", asrc), "question_id", asrc);
    if (!by_id.emplace(qid, &a).second) {
      throw DataError("duplicate annotation for question " + std::to_string(qid));
    }
  }
  std::vector<IqaTriplet> out;
  for (const auto& q : field(questions, "questions", qsrc)) {
    IqaTriplet t;
    t.split = split;
    t.question_id = as<std::uint64_t>(field(q, "question_id", qsrc), "question_id", qsrc);
    t.image_id = as<std::int64_t>(field(q, "image_id", qsrc), "image_id", qsrc);
    t.question = as<std::string>(field(q, "question", qsrc), "question", qsrc);
    auto it = by_id.find(t.question_id);
    if (it == by_id.end()) throw DataError("question " + std::to_string(t.question_id) + " has no annotation");
    const json& a = *it->second;
    if (as<std::int64_t>(field(a, "image_id", asrc), "image_id", asrc) != t.image_id) {
      throw DataError("question " + std::to_string(t.question_id) + ": image id disagrees with annotation");
    }
    t.answer_type = parse_answer_type(as<std::string>(field(a, "answer_type", asrc), "answer_type", asrc));
    if (a.contains("answers")) {
      for (const auto& h : a.at("answers")) {
        t.answers.push_back(as<std::string>(field(h, "answer", asrc), "answer", asrc));
      }
    }
    if (a.contains("multiple_choice_answer")) {
      t.answer = as<std::string>(a.at("multiple_choice_answer"), "multiple_choice_answer", asrc);
    }
    if (t.answer.empty() && !t.answers.empty()) t.answer = majority_answer(t);
    if (t.question.empty() || t.answer.empty()) {
      throw DataError("question " + std::to_string(t.question_id) + " lacks text or answers");
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<IqaTriplet> load_triplets(const std::filesystem::path& questions,
                                      const std::filesystem::path& annotations) {
  return load_triplets(read_json(questions), read_json(annotations));
}

std::string majority_answer(const IqaTriplet& t) {
  if (t.answers.empty()) return t.answer;
  std::map<std::string, std::size_t> counts;
  for (const auto& a : t.answers) ++counts[a];
  const std::string* best = nullptr;
  std::size_t best_count = 0;
  for (const auto& [a, c] : counts) {
    if (c > best_count) {
      best = &a;
      best_count = c;
    }
  }
  return *best;
}

std::string naive_plural(const std::string& name) {
  auto ends = [&](std::string_view suf) {
    return name.size() >= suf.size() && name.compare(name.size() - suf.size(), suf.size(), suf) == 0;
  };
  if (ends("s") || ends("x") || ends("z") || ends("ch") || ends("sh")) return name + "es";
  return name + "s";
}

void SynonymLexicon::add(const std::string& category, const std::string& phrase) {
  auto tokens = normalize_tokens(phrase);
  if (tokens.empty()) return;
  auto& list = phrases_[category];
  if (std::find(list.begin(), list.end(), tokens) == list.end()) list.push_back(std::move(tokens));
}

const std::vector<std::vector<std::string>>& SynonymLexicon::phrases(const std::string& category) const {
  static const std::vector<std::vector<std::string>> kNone;
  auto it = phrases_.find(category);
  return it == phrases_.end() ? kNone : it->second;
}

SynonymLexicon SynonymLexicon::defaults(const std::map<std::int64_t, Category>& categories) {
  SynonymLexicon lex;
  for (const auto& [id, cat] : categories) {
    const auto name = normalize_tokens(cat.name);
    std::string joined;
    for (std::size_t i = 0; i < name.size(); ++i) joined += (i ? " " : "") + name[i];
    lex.add(cat.name, joined);
    if (!name.empty()) {
      std::string plural;
      for (std::size_t i = 0; i + 1 < name.size(); ++i) plural += name[i] + " ";
      lex.add(cat.name, plural + naive_plural(name.back()));
    }
  }
  return lex;
}

SynonymLexicon SynonymLexicon::with_overrides(const std::map<std::int64_t, Category>& categories,
                                              const json& extra) {
  SynonymLexicon lex = defaults(categories);
  if (!extra.is_object()) throw DataError("lexicon must be a JSON object of category -> phrases");
  for (const auto& [name, phrases] : extra.items()) {
    if (!phrases.is_array()) throw DataError("lexicon entry '" + name + "' must be an array");
    for (const auto& p : phrases) lex.add(name, as<std::string>(p, "phrase", "lexicon"));
  }
  return lex;
}

bool contains_phrase(std::span<const std::string> tokens, std::span<const std::string> phrase) {
  if (phrase.empty() || phrase.size() > tokens.size()) return false;
  for (std::size_t i = 0; i + phrase.size() <= tokens.size(); ++i) {
    if (std::equal(phrase.begin(), phrase.end(), tokens.begin() + static_cast<std::ptrdiff_t>(i))) {
      return true;
    }
  }
  return false;
}

UnknownReason classify_triplet(const IqaTriplet& t, const InstanceIndex& index,
                               const std::set<std::int64_t>& unknown_ids,
                               const SynonymLexicon& lexicon,
                               const std::vector<std::string>& unknown_names) {
  if (!index.has_image(t.image_id)) {
    throw DataError("triplet " + std::to_string(t.question_id) + " references missing image " +
                    std::to_string(t.image_id));
  }
  UnknownReason r;
  for (auto c : index.categories_in(t.image_id)) {
    if (unknown_ids.count(c)) {
      r.visual = true;
      break;
    }
  }
  const auto tokens = normalize_tokens(t.question);
  for (const auto& name : unknown_names) {
    for (const auto& phrase : lexicon.phrases(name)) {
      if (contains_phrase(tokens, phrase)) {
        r.semantic = true;
        return r;
      }
    }
  }
  return r;
}

SplitManifest split_triplets(std::span<const IqaTriplet> triplets, const InstanceIndex& index,
                             std::span<const CategoryStats> unknown, const SynonymLexicon& lexicon) {
  std::set<std::int64_t> unknown_ids;
  std::vector<std::string> names;
  for (const auto& u : unknown) {
    unknown_ids.insert(u.category.id);
    names.push_back(u.category.name);
  }
  std::unordered_set<std::uint64_t> seen;
  SplitManifest m;
  m.unknown_categories = names;
  std::size_t visual = 0, semantic_only = 0;
  std::set<std::int64_t> train_images, train_unknown_images, val_images, val_unknown_images;
  for (const auto& t : triplets) {
    if (!seen.insert(t.question_id).second) {
      throw DataError("duplicate question id " + std::to_string(t.question_id));
    }
    const auto r = classify_triplet(t, index, unknown_ids, lexicon, names);
    if (r.visual) ++visual;
    if (r.semantic && !r.visual) ++semantic_only;
    const bool train = t.split == SourceSplit::train;
    (train ? train_images : val_images).insert(t.image_id);
    if (r.visual) (train ? train_unknown_images : val_unknown_images).insert(t.image_id);
    auto& dst = train ? (r.unknown() ? m.testset : m.trainset)
                      : (r.unknown() ? m.valset_unknown : m.valset_known);
    dst.push_back(t.question_id);
  }
  for (auto* list : {&m.trainset, &m.testset, &m.valset_known, &m.valset_unknown}) {
    std::sort(list->begin(), list->end());
  }

  json cats = json::array();
  std::set<std::string> unknown_set(names.begin(), names.end());
  for (const auto& s : index.stats()) {
    cats.push_back({{"name", s.category.name},
                    {"supercategory", s.category.supercategory},
                    {"images", s.images},
                    {"instances", s.instances},
                    {"occurrence", s.occurrence()},
                    {"unknown", unknown_set.count(s.category.name) != 0}});
  }
  auto pct = [](std::size_t part, std::size_t whole) {
    return whole == 0 ? 0.0 : 100.0 * static_cast<double>(part) / static_cast<double>(whole);
  };
  const std::size_t train_total = m.trainset.size() + m.testset.size();
  const std::size_t val_total = m.valset_known.size() + m.valset_unknown.size();
  m.stats = {
      {"categories", cats},
      {"counts",
       {{"trainset", m.trainset.size()},
        {"testset", m.testset.size()},
        {"valset_known", m.valset_known.size()},
        {"valset_unknown", m.valset_unknown.size()}}},
      {"unknown_triplet_percent", {{"train", pct(m.testset.size(), train_total)},
                                   {"val", pct(m.valset_unknown.size(), val_total)}}},
      {"unknown_image_percent",
       {{"train", pct(train_unknown_images.size(), train_images.size())},
        {"val", pct(val_unknown_images.size(), val_images.size())}}},
      {"unknown_reasons", {{"visual", visual}, {"semantic_only", semantic_only}}},
  };
  return m;
}

AnswerDictionary build_answer_dict(std::span<const IqaTriplet> trainset, std::size_t size) {
  if (trainset.empty()) throw std::invalid_argument("build_answer_dict: empty trainset");
  std::map<std::string, std::size_t> freq;
  for (const auto& t : trainset) ++freq[t.answer];
  std::vector<std::pair<std::string, std::size_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  if (ranked.size() > size) ranked.resize(size);
  std::vector<std::string> answers;
  for (auto& [a, c] : ranked) answers.push_back(a);
  return AnswerDictionary(std::move(answers));
}

bool SplitManifest::same_split(const SplitManifest& o) const {
  return unknown_categories == o.unknown_categories && trainset == o.trainset &&
         testset == o.testset && valset_known == o.valset_known && valset_unknown == o.valset_unknown;
}

std::size_t SplitManifest::total() const {
  return trainset.size() + testset.size() + valset_known.size() + valset_unknown.size();
}

json SplitManifest::to_json() const {
  return {{"unknown_categories", unknown_categories},
          {"trainset", trainset},
          {"testset", testset},
          {"valset_known", valset_known},
          {"valset_unknown", valset_unknown},
          {"stats", stats},
          {"provenance", provenance}};
}

SplitManifest SplitManifest::from_json(const json& j) {
  const std::string src = "manifest";
  SplitManifest m;
  m.unknown_categories = as<std::vector<std::string>>(field(j, "unknown_categories", src), "unknown_categories", src);
  m.trainset = as<std::vector<std::uint64_t>>(field(j, "trainset", src), "trainset", src);
  m.testset = as<std::vector<std::uint64_t>>(field(j, "testset", src), "testset", src);
  m.valset_known = as<std::vector<std::uint64_t>>(field(j, "valset_known", src), "valset_known", src);
  m.valset_unknown = as<std::vector<std::uint64_t>>(field(j, "valset_unknown", src), "valset_unknown", src);
  if (j.contains("stats")) m.stats = j.at("stats");
  if (j.contains("provenance")) m.provenance = j.at("provenance");
  return m;
}

void SplitManifest::save(const std::filesystem::path& path) const { write_json(path, to_json()); }

SplitManifest SplitManifest::load(const std::filesystem::path& path) {
  return from_json(read_json(path));
}

}  // namespace jex
