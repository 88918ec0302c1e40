#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "jex/tensor.hpp"

namespace jex {

// One attention map per glimpse. The joint embedding's t_e channels are
// split into `glimpses` equal groups; glimpse g scores each grid cell with
// a linear map of its channel group (column g of `weights`, which is
// (t_e / glimpses) x glimpses) and normalizes the scores over cells.
// Returns `glimpses` vars of shape G x 1.
std::vector<Var> compute_attention(const Var& joint, const Var& weights, std::size_t glimpses);

// Attention-weighted sum of grid rows per glimpse, concatenated:
// 1 x (glimpses * n_v).
Var attend(const Var& grid, std::span<const Var> alphas);

// Value-only forms.
std::vector<std::vector<double>> compute_attention(const Tensor& joint, const Tensor& weights,
                                                   std::size_t glimpses);
std::vector<double> attend(const Tensor& grid, const std::vector<std::vector<double>>& alphas);

}  // namespace jex
