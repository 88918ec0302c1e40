#include "jex/attention.hpp"

#include <stdexcept>
#include <string>

namespace jex {

std::vector<Var> compute_attention(const Var& joint, const Var& weights, std::size_t glimpses) {
  const Tensor& e = joint.value();
  const Tensor& w = weights.value();
  if (glimpses == 0) throw std::invalid_argument("compute_attention: glimpses must be positive");
  if (e.rank() != 2 || e.dim(1) % glimpses != 0) {
    throw std::invalid_argument("compute_attention: shape mismatch, joint embedding " +
                                shape_str(e.shape) + " for " + std::to_string(glimpses) +
                                " glimpses");
  }
  const std::size_t group = e.dim(1) / glimpses;
  if (w.rank() != 2 || w.dim(0) != group || w.dim(1) != glimpses) {
    throw std::invalid_argument("compute_attention: shape mismatch, weights " + shape_str(w.shape) +
                                " expected (" + std::to_string(group) + "x" +
                                std::to_string(glimpses) + ")");
  }
  std::vector<Var> maps;
  maps.reserve(glimpses);
  for (std::size_t g = 0; g < glimpses; ++g) {
    const Var channels = glimpses == 1 ? joint : slice_cols(joint, g * group, (g + 1) * group);
    const Var proj = glimpses == 1 ? weights : slice_cols(weights, g, g + 1);
    maps.push_back(softmax(matmul(channels, proj)));
  }
  return maps;
}

Var attend(const Var& grid, std::span<const Var> alphas) {
  if (alphas.empty()) throw std::invalid_argument("attend: no attention maps");
  std::vector<Var> parts;
  parts.reserve(alphas.size());
  for (const auto& a : alphas) parts.push_back(weighted_sum(grid, a));
  return parts.size() == 1 ? parts[0] : concat(parts);
}

std::vector<std::vector<double>> compute_attention(const Tensor& joint, const Tensor& weights,
                                                   std::size_t glimpses) {
  Tape tape;
  const auto maps = compute_attention(tape.constant(joint), tape.constant(weights), glimpses);
  std::vector<std::vector<double>> out;
  for (const auto& m : maps) out.push_back(m.value().data);
  return out;
}

std::vector<double> attend(const Tensor& grid, const std::vector<std::vector<double>>& alphas) {
  Tape tape;
  const Var g = tape.constant(grid);
  std::vector<Var> maps;
  for (const auto& a : alphas) maps.push_back(tape.constant(Tensor({a.size(), 1}, a)));
  return attend(g, maps).value().data;
}

}  // namespace jex
