#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace jex {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major array of doubles. `grad` is empty until something
// accumulates into it, after which it always matches `data` in length.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;

  Tensor() = default;
  Tensor(Shape s, std::vector<double> values, bool trainable = false);

  static Tensor zeros(Shape s, bool trainable = false);
  static Tensor filled(Shape s, double value, bool trainable = false);
  static Tensor scalar(double value);
  // 1 x n row vector.
  static Tensor row(std::vector<double> values);

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t dim(std::size_t axis) const { return shape.at(axis); }
  bool has_grad() const { return !grad.empty(); }

  // Row-major element access for rank 2 and 3.
  double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
  double& at(std::size_t i, std::size_t j, std::size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  double at(std::size_t i, std::size_t j, std::size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }

  void zero_grad();
  bool all_finite() const;
};

class Tape;

// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor& value() const;
  const Shape& shape() const { return value().shape; }
  std::size_t size() const { return value().size(); }
  // Gradient of the last backward pass w.r.t. this node (empty before).
  const std::vector<double>& grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Ordered record of differentiable operations. Nodes are appended in
// execution order, so every node's inputs precede it.
class Tape {
 public:
  struct Node {
    Tensor value;
    std::vector<double> grad;
    std::vector<std::size_t> inputs;
    // Reads this node's grad and accumulates into the inputs' grads.
    std::function<void(Tape&, const Node&)> backward;
    Tensor* param = nullptr;
    bool needs_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Trainable leaf. The tensor must outlive the tape; backward adds into
  // its `grad`.
  Var param(Tensor& t);
  Var constant(Tensor t);

  Var record(Tensor value, std::vector<std::size_t> inputs,
             std::function<void(Tape&, const Node&)> backward);

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::vector<double>& grad_of(std::size_t id);
  std::size_t size() const { return nodes_.size(); }
  bool empty() const { return nodes_.empty(); }

  // Number of nodes whose backward ran in the last pass.
  std::size_t last_backward_visits() const { return visits_; }

  void backward(const Var& loss);

 private:
  std::deque<Node> nodes_;
  std::size_t visits_ = 0;
};

// Reverse-mode pass from a scalar loss. Populates `grad` on every
// parameter leaf reachable from `loss`.
void backward(const Var& loss);

// ---- Differentiable operations ----------------------------------------

Var matmul(const Var& a, const Var& b);  // (m x k) * (k x n)
// Contract `t` (rank 3) with `m` along `mode` (1-based): the mode's extent
// must equal rows(m) and is replaced by cols(m).
Var n_mode_product(const Var& t, const Var& m, int mode);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
// Softmax over all elements; output keeps the input shape.
Var softmax(const Var& x);
// Concatenate rank-2 tensors with equal row counts along columns.
Var concat(std::span<const Var> parts);
Var slice_rows(const Var& x, std::size_t begin, std::size_t end);
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);
Var reshape(const Var& x, Shape shape);
Var sum(const Var& x);
// sum_g weights[g] * rows[g,:] for weights of G elements and rows G x n.
Var weighted_sum(const Var& rows, const Var& weights);
// Output shape {1, buckets}.
Var maxpool1d(const Var& x, std::size_t buckets);
// -sum target * log softmax(logits); target must be a distribution.
Var cross_entropy(const Var& logits, std::span<const double> target);

// ---- Plain (non-recorded) helpers -------------------------------------

std::vector<double> softmax(std::span<const double> x);
std::vector<double> maxpool1d(std::span<const double> x, std::size_t buckets);
Tensor n_mode_product(const Tensor& t, const Tensor& m, int mode);

// Window width used by maxpool1d: ceil(len / buckets).
std::size_t maxpool_window(std::size_t len, std::size_t buckets);

}  // namespace jex
