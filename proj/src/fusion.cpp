#include "jex/fusion.hpp"

#include <stdexcept>

namespace jex {

TuckerParams TuckerParams::random(std::size_t n_q, std::size_t n_v, std::size_t t_q,
                                  std::size_t t_v, std::size_t t_e, std::mt19937_64& rng) {
  TuckerParams p;
  p.tau_q = init_uniform({n_q, t_q}, n_q, rng);
  p.tau_v = init_uniform({n_v, t_v}, n_v, rng);
  p.core = init_uniform({t_q, t_v, t_e}, t_q * t_v, rng);
  p.validate();
  return p;
}

NamedTensors TuckerParams::named(const std::string& prefix) {
  return {{prefix + "core", &core}, {prefix + "tau_q", &tau_q}, {prefix + "tau_v", &tau_v}};
}

void TuckerParams::validate() const {
  if (core.rank() != 3 || tau_q.rank() != 2 || tau_v.rank() != 2) {
    throw std::invalid_argument("tucker parameters: core must be rank 3 and factors matrices");
  }
  if (tau_q.dim(1) != t_q() || tau_v.dim(1) != t_v()) {
    throw std::invalid_argument("tucker parameters: factor ranks do not match core " +
                                shape_str(core.shape));
  }
  if (t_q() > n_q() || t_v() > n_v()) {
    throw std::invalid_argument("tucker parameters: factor rank exceeds input dimension");
  }
}

Var tucker_fuse(Tape& tape, TuckerParams& p, const Var& q, const Var& v) {
  p.validate();
  if (q.size() != p.n_q()) {
    throw std::invalid_argument("tucker_fuse: dimension mismatch, question length " +
                                std::to_string(q.size()) + " vs n_q " + std::to_string(p.n_q()));
  }
  if (v.value().rank() != 2 || v.value().dim(1) != p.n_v()) {
    throw std::invalid_argument("tucker_fuse: dimension mismatch, visual input " +
                                shape_str(v.shape()) + " vs n_v " + std::to_string(p.n_v()));
  }
  const Var q_low = matmul(reshape(q, {1, p.n_q()}), tape.param(p.tau_q));
  const Var v_low = matmul(v, tape.param(p.tau_v));
  // Contract the core's question mode first; leaves a t_v x t_e map that
  // every visual row shares.
  const Var shared = n_mode_product(tape.param(p.core), reshape(q_low, {p.t_q(), 1}), 1);
  return matmul(v_low, reshape(shared, {p.t_v(), p.t_e()}));
}

Tensor tucker_fuse(std::span<const double> q, const Tensor& v, const TuckerParams& params) {
  Tape tape;
  TuckerParams copy = params;
  const Var qv = tape.constant(Tensor({1, q.size()}, std::vector<double>(q.begin(), q.end())));
  const Var vv = tape.constant(v);
  Tensor out = tucker_fuse(tape, copy, qv, vv).value();
  return out;
}

ParamCount param_count(std::uint64_t n_q, std::uint64_t n_v, std::uint64_t n_e, std::uint64_t t_q,
                       std::uint64_t t_v, std::uint64_t t_e) {
  return {n_q * n_v * n_e, t_q * t_v * t_e + n_q * t_q + n_v * t_v + n_e * t_e};
}

}  // namespace jex
