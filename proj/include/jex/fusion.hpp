#pragma once

#include <cstdint>
#include <random>
#include <string>

#include "jex/encoders.hpp"
#include "jex/tensor.hpp"

namespace jex {

// Tucker-factored bilinear map. The output factor (t_e -> n_e) is owned by
// whatever consumes the fused vector (the answer classifier), so a fusion
// yields t_e channels per input row.
struct TuckerParams {
  Tensor core;   // t_q x t_v x t_e
  Tensor tau_q;  // n_q x t_q
  Tensor tau_v;  // n_v x t_v

  static TuckerParams random(std::size_t n_q, std::size_t n_v, std::size_t t_q, std::size_t t_v,
                             std::size_t t_e, std::mt19937_64& rng);

  std::size_t n_q() const { return tau_q.dim(0); }
  std::size_t n_v() const { return tau_v.dim(0); }
  std::size_t t_q() const { return core.dim(0); }
  std::size_t t_v() const { return core.dim(1); }
  std::size_t t_e() const { return core.dim(2); }

  NamedTensors named(const std::string& prefix);
  void validate() const;
};

// e[r, k] = sum_ij core[i,j,k] * (q tau_q)_i * (v[r] tau_v)_j for each row r
// of v. q is 1 x n_q, v is rows x n_v; result is rows x t_e.
Var tucker_fuse(Tape& tape, TuckerParams& params, const Var& q, const Var& v);
Tensor tucker_fuse(std::span<const double> q, const Tensor& v, const TuckerParams& params);

struct ParamCount {
  std::uint64_t naive = 0;
  std::uint64_t tucker = 0;
};

// Full n_q x n_v x n_e interaction tensor vs. core plus three factors.
ParamCount param_count(std::uint64_t n_q, std::uint64_t n_v, std::uint64_t n_e, std::uint64_t t_q,
                       std::uint64_t t_v, std::uint64_t t_e);

}  // namespace jex
