#include "jex/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <utility>

namespace jex {

std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> values, bool trainable)
    : shape(std::move(s)), data(std::move(values)), requires_grad(trainable) {
  for (auto d : shape) {
    if (d == 0) throw std::invalid_argument("tensor dimensions must be positive");
  }
  if (numel(shape) != data.size()) {
    throw std::invalid_argument("tensor payload size " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
}

Tensor Tensor::zeros(Shape s, bool trainable) { return filled(std::move(s), 0.0, trainable); }

Tensor Tensor::filled(Shape s, double value, bool trainable) {
  const auto n = numel(s);
  return Tensor(std::move(s), std::vector<double>(n, value), trainable);
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::row(std::vector<double> values) {
  const auto n = values.size();
  return Tensor({1, n}, std::move(values));
}

void Tensor::zero_grad() { grad.assign(data.size(), 0.0); }

bool Tensor::all_finite() const {
  auto finite = [](double v) { return std::isfinite(v); };
  return std::all_of(data.begin(), data.end(), finite) &&
         std::all_of(grad.begin(), grad.end(), finite);
}

// ---- Tape ----------------------------------------------------------------

const Tensor& Var::value() const { return tape_->node(id_).value; }
const std::vector<double>& Var::grad() const { return tape_->node(id_).grad; }

Var Tape::param(Tensor& t) {
  Node n;
  n.value = Tensor(t.shape, t.data);
  n.param = &t;
  n.needs_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor t) {
  Node n;
  n.value = std::move(t);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> inputs,
                 std::function<void(Tape&, const Node&)> backward) {
  Node n;
  n.value = std::move(value);
  for (auto i : inputs) n.needs_grad = n.needs_grad || nodes_.at(i).needs_grad;
  n.inputs = std::move(inputs);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

std::vector<double>& Tape::grad_of(std::size_t id) {
  auto& n = nodes_.at(id);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(const Var& loss) {
  if (nodes_.empty()) throw std::invalid_argument("backward: tape is empty");
  if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (node(loss.id()).value.size() != 1) {
    throw std::invalid_argument("backward: loss is not a scalar, shape " +
                                shape_str(node(loss.id()).value.shape));
  }
  for (auto& n : nodes_) n.grad.clear();
  grad_of(loss.id())[0] = 1.0;
  visits_ = 0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    auto& n = nodes_[id];
    if (n.grad.empty() || !n.needs_grad) continue;
    ++visits_;
    if (n.backward) n.backward(*this, n);
    if (n.param != nullptr) {
      auto& g = n.param->grad;
      if (g.empty()) g.assign(n.param->data.size(), 0.0);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += n.grad[i];
    }
  }
}

void backward(const Var& loss) {
  if (!loss.valid()) throw std::invalid_argument("backward: tape is empty");
  loss.tape()->backward(loss);
}

namespace {

Tape& same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape() || a.tape() == nullptr) {
    throw std::invalid_argument("operands recorded on different tapes");
  }
  return *a.tape();
}

void require_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(op) + ": expected a matrix, got shape " +
                                shape_str(t.shape));
  }
}

// c (m x n) += a (m x k) * b (k x n), with optional transposes of a or b.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n, bool ta, bool tb) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ta ? a[p * m + i] : a[i * k + p];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      if (!tb) {
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      } else {
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * b[j * k + p];
      }
    }
  }
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_rank2(A, "matmul");
  require_rank2(B, "matmul");
  const std::size_t m = A.dim(0), k = A.dim(1), n = B.dim(1);
  if (B.dim(0) != k) {
    throw std::invalid_argument("matmul: dimension mismatch " + shape_str(A.shape) + " * " +
                                shape_str(B.shape));
  }
  Tensor out = Tensor::zeros({m, n});
  gemm_acc(A.data.data(), B.data.data(), out.data.data(), m, k, n, false, false);
  return tape.record(std::move(out), {a.id(), b.id()}, [m, k, n](Tape& t, const Tape::Node& self) {
    const auto ia = self.inputs[0], ib = self.inputs[1];
    const Tensor& A = t.node(ia).value;
    const Tensor& B = t.node(ib).value;
    if (t.node(ia).needs_grad) {
      // dA = dC * B^T
      gemm_acc(self.grad.data(), B.data.data(), t.grad_of(ia).data(), m, n, k, false, true);
    }
    if (t.node(ib).needs_grad) {
      // dB = A^T * dC
      gemm_acc(A.data.data(), self.grad.data(), t.grad_of(ib).data(), k, m, n, true, false);
    }
  });
}

namespace {

void check_n_mode(const Shape& ts, const Shape& ms, int mode) {
  if (mode < 1 || mode > 3) throw std::invalid_argument("n_mode_product: mode out of range");
  if (ts.size() != 3) throw std::invalid_argument("n_mode_product: tensor must be rank 3");
  if (ms.size() != 2) throw std::invalid_argument("n_mode_product: factor must be a matrix");
  if (ts[mode - 1] != ms[0]) {
    throw std::invalid_argument("n_mode_product: dimension mismatch, mode " +
                                std::to_string(mode) + " of " + shape_str(ts) +
                                " vs matrix " + shape_str(ms));
  }
}

// Views a rank-3 tensor as (outer, len, inner) around `mode`.
struct ModeView {
  std::size_t outer, len, inner;
};

ModeView mode_view(const Shape& s, int mode) {
  std::size_t outer = 1, inner = 1;
  for (int i = 0; i < mode - 1; ++i) outer *= s[i];
  for (int i = mode; i < 3; ++i) inner *= s[i];
  return {outer, s[mode - 1], inner};
}

}  // namespace

Tensor n_mode_product(const Tensor& t, const Tensor& m, int mode) {
  check_n_mode(t.shape, m.shape, mode);
  const auto v = mode_view(t.shape, mode);
  const std::size_t cols = m.dim(1);
  Shape out_shape = t.shape;
  out_shape[mode - 1] = cols;
  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t r = 0; r < v.len; ++r) {
      const double* src = t.data.data() + (o * v.len + r) * v.inner;
      for (std::size_t c = 0; c < cols; ++c) {
        const double w = m.data[r * cols + c];
        double* dst = out.data.data() + (o * cols + c) * v.inner;
        for (std::size_t i = 0; i < v.inner; ++i) dst[i] += w * src[i];
      }
    }
  }
  return out;
}

Var n_mode_product(const Var& t, const Var& m, int mode) {
  Tape& tape = same_tape(t, m);
  Tensor out = n_mode_product(t.value(), m.value(), mode);
  return tape.record(std::move(out), {t.id(), m.id()}, [mode](Tape& tp, const Tape::Node& self) {
    const auto it = self.inputs[0], im = self.inputs[1];
    const Tensor& T = tp.node(it).value;
    const Tensor& M = tp.node(im).value;
    const auto v = mode_view(T.shape, mode);
    const std::size_t cols = M.dim(1);
    const bool gt = tp.node(it).needs_grad, gm = tp.node(im).needs_grad;
    double* dT = gt ? tp.grad_of(it).data() : nullptr;
    double* dM = gm ? tp.grad_of(im).data() : nullptr;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t r = 0; r < v.len; ++r) {
        const std::size_t src_off = (o * v.len + r) * v.inner;
        for (std::size_t c = 0; c < cols; ++c) {
          const double* gout = self.grad.data() + (o * cols + c) * v.inner;
          if (gt) {
            const double w = M.data[r * cols + c];
            for (std::size_t i = 0; i < v.inner; ++i) dT[src_off + i] += w * gout[i];
          }
          if (gm) {
            double acc = 0.0;
            for (std::size_t i = 0; i < v.inner; ++i) acc += T.data[src_off + i] * gout[i];
            dM[r * cols + c] += acc;
          }
        }
      }
    }
  });
}

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Var add(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, "add");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor out(A.shape, std::vector<double>(A.size()));
  for (std::size_t i = 0; i < A.size(); ++i) out.data[i] = A.data[i] + B.data[i];
  return tape.record(std::move(out), {a.id(), b.id()}, [](Tape& t, const Tape::Node& self) {
    for (auto in : self.inputs) {
      if (!t.node(in).needs_grad) continue;
      auto& g = t.grad_of(in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, "sub");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor out(A.shape, std::vector<double>(A.size()));
  for (std::size_t i = 0; i < A.size(); ++i) out.data[i] = A.data[i] - B.data[i];
  return tape.record(std::move(out), {a.id(), b.id()}, [](Tape& t, const Tape::Node& self) {
    if (t.node(self.inputs[0]).needs_grad) {
      auto& g = t.grad_of(self.inputs[0]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (t.node(self.inputs[1]).needs_grad) {
      auto& g = t.grad_of(self.inputs[1]);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = same_tape(a, b);
  require_same_shape(a, b, "mul");
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  Tensor out(A.shape, std::vector<double>(A.size()));
  for (std::size_t i = 0; i < A.size(); ++i) out.data[i] = A.data[i] * B.data[i];
  return tape.record(std::move(out), {a.id(), b.id()}, [](Tape& t, const Tape::Node& self) {
    const auto ia = self.inputs[0], ib = self.inputs[1];
    const auto& A = t.node(ia).value.data;
    const auto& B = t.node(ib).value.data;
    if (t.node(ia).needs_grad) {
      auto& g = t.grad_of(ia);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * B[i];
    }
    if (t.node(ib).needs_grad) {
      auto& g = t.grad_of(ib);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * A[i];
    }
  });
}

Var tanh(const Var& x) {
  Tensor out = x.value();
  out.grad.clear();
  for (auto& v : out.data) v = std::tanh(v);
  return x.tape()->record(std::move(out), {x.id()}, [](Tape& t, const Tape::Node& self) {
    auto& g = t.grad_of(self.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value.data[i];
      g[i] += self.grad[i] * (1.0 - y * y);
    }
  });
}

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  out.grad.clear();
  for (auto& v : out.data) {
    v = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
  }
  return x.tape()->record(std::move(out), {x.id()}, [](Tape& t, const Tape::Node& self) {
    auto& g = t.grad_of(self.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double y = self.value.data[i];
      g[i] += self.grad[i] * y * (1.0 - y);
    }
  });
}

std::vector<double> softmax(std::span<const double> x) {
  if (x.empty()) throw std::invalid_argument("softmax: empty input");
  const double mx = *std::max_element(x.begin(), x.end());
  std::vector<double> out(x.size());
  double total = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - mx);
    total += out[i];
  }
  for (auto& v : out) v /= total;
  return out;
}

Var softmax(const Var& x) {
  Tensor out(x.shape(), softmax(x.value().data));
  return x.tape()->record(std::move(out), {x.id()}, [](Tape& t, const Tape::Node& self) {
    const auto& y = self.value.data;
    double dot = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) dot += self.grad[i] * y[i];
    auto& g = t.grad_of(self.inputs[0]);
    for (std::size_t i = 0; i < y.size(); ++i) g[i] += y[i] * (self.grad[i] - dot);
  });
}

Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  Tape* tape = parts[0].tape();
  const std::size_t rows = parts[0].value().rank() == 2 ? parts[0].value().dim(0) : 0;
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    if (p.tape() != tape) throw std::invalid_argument("concat: operands on different tapes");
    require_rank2(p.value(), "concat");
    if (p.value().dim(0) != rows) throw std::invalid_argument("concat: row count mismatch");
    cols += p.value().dim(1);
    ids.push_back(p.id());
    widths.push_back(p.value().dim(1));
  }
  Tensor out = Tensor::zeros({rows, cols});
  std::size_t off = 0;
  for (const auto& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(v.data.begin() + r * v.dim(1), v.dim(1), out.data.begin() + r * cols + off);
    }
    off += v.dim(1);
  }
  return tape->record(std::move(out), std::move(ids),
                      [rows, cols, widths](Tape& t, const Tape::Node& self) {
                        std::size_t off = 0;
                        for (std::size_t p = 0; p < widths.size(); ++p) {
                          const auto in = self.inputs[p];
                          const auto w = widths[p];
                          if (t.node(in).needs_grad) {
                            auto& g = t.grad_of(in);
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < w; ++c) {
                                g[r * w + c] += self.grad[r * cols + off + c];
                              }
                            }
                          }
                          off += w;
                        }
                      });
}

Var slice_rows(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& X = x.value();
  require_rank2(X, "slice_rows");
  if (begin >= end || end > X.dim(0)) throw std::invalid_argument("slice_rows: range out of bounds");
  const std::size_t cols = X.dim(1);
  Tensor out({end - begin, cols},
             std::vector<double>(X.data.begin() + begin * cols, X.data.begin() + end * cols));
  return x.tape()->record(std::move(out), {x.id()}, [begin, cols](Tape& t, const Tape::Node& self) {
    auto& g = t.grad_of(self.inputs[0]);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * cols + i] += self.grad[i];
  });
}

Var slice_cols(const Var& x, std::size_t begin, std::size_t end) {
  const Tensor& X = x.value();
  require_rank2(X, "slice_cols");
  if (begin >= end || end > X.dim(1)) throw std::invalid_argument("slice_cols: range out of bounds");
  const std::size_t rows = X.dim(0), cols = X.dim(1), w = end - begin;
  Tensor out = Tensor::zeros({rows, w});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(X.data.begin() + r * cols + begin, w, out.data.begin() + r * w);
  }
  return x.tape()->record(std::move(out), {x.id()},
                          [rows, cols, begin, w](Tape& t, const Tape::Node& self) {
                            auto& g = t.grad_of(self.inputs[0]);
                            for (std::size_t r = 0; r < rows; ++r) {
                              for (std::size_t c = 0; c < w; ++c) {
                                g[r * cols + begin + c] += self.grad[r * w + c];
                              }
                            }
                          });
}

Var reshape(const Var& x, Shape shape) {
  if (numel(shape) != x.size()) {
    throw std::invalid_argument("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  Tensor out(std::move(shape), x.value().data);
  return x.tape()->record(std::move(out), {x.id()}, [](Tape& t, const Tape::Node& self) {
    auto& g = t.grad_of(self.inputs[0]);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Var sum(const Var& x) {
  const auto& d = x.value().data;
  const double total = std::accumulate(d.begin(), d.end(), 0.0);
  return x.tape()->record(Tensor::scalar(total), {x.id()}, [](Tape& t, const Tape::Node& self) {
    auto& g = t.grad_of(self.inputs[0]);
    for (auto& v : g) v += self.grad[0];
  });
}

Var weighted_sum(const Var& rows, const Var& weights) {
  Tape& tape = same_tape(rows, weights);
  const Tensor& R = rows.value();
  const Tensor& W = weights.value();
  require_rank2(R, "weighted_sum");
  const std::size_t g_count = R.dim(0), n = R.dim(1);
  if (W.size() != g_count) {
    throw std::invalid_argument("weighted_sum: length mismatch, " + std::to_string(W.size()) +
                                " weights for " + std::to_string(g_count) + " rows");
  }
  Tensor out = Tensor::zeros({1, n});
  for (std::size_t g = 0; g < g_count; ++g) {
    for (std::size_t j = 0; j < n; ++j) out.data[j] += W.data[g] * R.data[g * n + j];
  }
  return tape.record(std::move(out), {rows.id(), weights.id()},
                     [g_count, n](Tape& t, const Tape::Node& self) {
                       const auto ir = self.inputs[0], iw = self.inputs[1];
                       const auto& R = t.node(ir).value.data;
                       const auto& W = t.node(iw).value.data;
                       if (t.node(ir).needs_grad) {
                         auto& g = t.grad_of(ir);
                         for (std::size_t r = 0; r < g_count; ++r) {
                           for (std::size_t j = 0; j < n; ++j) g[r * n + j] += W[r] * self.grad[j];
                         }
                       }
                       if (t.node(iw).needs_grad) {
                         auto& g = t.grad_of(iw);
                         for (std::size_t r = 0; r < g_count; ++r) {
                           double acc = 0.0;
                           for (std::size_t j = 0; j < n; ++j) acc += R[r * n + j] * self.grad[j];
                           g[r] += acc;
                         }
                       }
                     });
}

std::size_t maxpool_window(std::size_t len, std::size_t buckets) {
  return (len + buckets - 1) / buckets;
}

namespace {

// Window i covers [i*w, min((i+1)*w, len)). When ceil-width windows run
// out before `buckets` (e.g. len=5, buckets=4), trailing windows collapse
// onto the final element.
std::pair<std::size_t, std::size_t> pool_bounds(std::size_t len, std::size_t w, std::size_t i) {
  const std::size_t begin = std::min(i * w, len - 1);
  const std::size_t end = std::max(std::min((i + 1) * w, len), begin + 1);
  return {begin, end};
}

std::vector<std::size_t> pool_argmax(std::span<const double> x, std::size_t buckets) {
  if (buckets == 0) throw std::invalid_argument("maxpool1d: bucket count must be positive");
  if (buckets > x.size()) {
    throw std::invalid_argument("maxpool1d: " + std::to_string(buckets) +
                                " buckets exceed input length " + std::to_string(x.size()));
  }
  const std::size_t w = maxpool_window(x.size(), buckets);
  std::vector<std::size_t> idx(buckets);
  for (std::size_t i = 0; i < buckets; ++i) {
    const auto [b, e] = pool_bounds(x.size(), w, i);
    std::size_t best = b;
    for (std::size_t j = b + 1; j < e; ++j) {
      if (x[j] > x[best]) best = j;
    }
    idx[i] = best;
  }
  return idx;
}

}  // namespace

std::vector<double> maxpool1d(std::span<const double> x, std::size_t buckets) {
  const auto idx = pool_argmax(x, buckets);
  std::vector<double> out(buckets);
  for (std::size_t i = 0; i < buckets; ++i) out[i] = x[idx[i]];
  return out;
}

Var maxpool1d(const Var& x, std::size_t buckets) {
  const auto idx = pool_argmax(x.value().data, buckets);
  Tensor out = Tensor::zeros({1, buckets});
  for (std::size_t i = 0; i < buckets; ++i) out.data[i] = x.value().data[idx[i]];
  return x.tape()->record(std::move(out), {x.id()}, [idx](Tape& t, const Tape::Node& self) {
    auto& g = t.grad_of(self.inputs[0]);
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
  });
}

Var cross_entropy(const Var& logits, std::span<const double> target) {
  const auto& z = logits.value().data;
  if (target.size() != z.size()) throw std::invalid_argument("cross_entropy: target length mismatch");
  double total = 0.0;
  for (double v : target) {
    if (!(v >= 0.0)) throw std::invalid_argument("cross_entropy: target not a distribution");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw std::invalid_argument("cross_entropy: target not a distribution");
  }
  const double mx = *std::max_element(z.begin(), z.end());
  double se = 0.0;
  for (double v : z) se += std::exp(v - mx);
  const double lse = mx + std::log(se);
  double loss = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    if (target[i] > 0.0) loss -= target[i] * (z[i] - lse);
  }
  std::vector<double> tgt(target.begin(), target.end());
  return logits.tape()->record(
      Tensor::scalar(loss), {logits.id()}, [tgt = std::move(tgt)](Tape& t, const Tape::Node& self) {
        const auto& z = t.node(self.inputs[0]).value.data;
        const auto p = softmax(z);
        auto& g = t.grad_of(self.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * (p[i] - tgt[i]);
      });
}

}  // namespace jex
