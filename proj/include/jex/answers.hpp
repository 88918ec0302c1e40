#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace jex {

// Ordered, duplicate-free list of candidate answers.
class AnswerDictionary {
 public:
  AnswerDictionary() = default;
  explicit AnswerDictionary(std::vector<std::string> answers);

  std::size_t size() const { return answers_.size(); }
  bool empty() const { return answers_.empty(); }
  const std::string& at(std::size_t i) const { return answers_.at(i); }
  std::optional<std::size_t> index(const std::string& answer) const;
  const std::vector<std::string>& answers() const { return answers_; }

 private:
  std::vector<std::string> answers_;
  std::unordered_map<std::string, std::size_t> index_;
};

// Answer at the argmax of `logits`; ties go to the lowest index.
const std::string& predict(std::span<const double> logits, const AnswerDictionary& dict);
std::size_t argmax(std::span<const double> values);

}  // namespace jex
