#include "jex/answers.hpp"

#include <cmath>
#include <stdexcept>

#include "jex/error.hpp"

namespace jex {

AnswerDictionary::AnswerDictionary(std::vector<std::string> answers) : answers_(std::move(answers)) {
  for (std::size_t i = 0; i < answers_.size(); ++i) {
    if (!index_.emplace(answers_[i], i).second) {
      throw std::invalid_argument("answer dictionary: duplicate answer '" + answers_[i] + "'");
    }
  }
}

std::optional<std::size_t> AnswerDictionary::index(const std::string& answer) const {
  auto it = index_.find(answer);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw std::invalid_argument("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

const std::string& predict(std::span<const double> logits, const AnswerDictionary& dict) {
  if (dict.empty()) throw std::invalid_argument("predict: empty answer dictionary");
  if (logits.size() != dict.size()) {
    throw std::invalid_argument("predict: " + std::to_string(logits.size()) + " logits for " +
                                std::to_string(dict.size()) + " answers");
  }
  for (double v : logits) {
    if (!std::isfinite(v)) throw NumericError("predict: non-finite logit");
  }
  return dict.at(argmax(logits));
}

}  // namespace jex
