#include "jex/kdtree.hpp"

#include <algorithm>
#include <stdexcept>

namespace jex {

double squared_distance(std::span<const double> a, std::span<const float> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc;
}

KdTree::KdTree(std::vector<float> points, std::size_t dim, std::size_t leaf_size)
    : points_(std::move(points)), dim_(dim), leaf_size_(std::max<std::size_t>(leaf_size, 1)) {
  if (dim_ == 0) throw std::invalid_argument("kd-tree: dimension must be positive");
  if (points_.size() % dim_ != 0) throw std::invalid_argument("kd-tree: ragged point buffer");
  const std::size_t n = points_.size() / dim_;
  if (n > UINT32_MAX) throw std::invalid_argument("kd-tree: too many points");
  order_.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) order_[i] = i;
  if (n > 0) build(0, static_cast<std::uint32_t>(n));
}

std::uint32_t KdTree::build(std::uint32_t begin, std::uint32_t end) {
  const auto id = static_cast<std::uint32_t>(nodes_.size());
  nodes_.push_back(Node{begin, end});
  if (end - begin <= leaf_size_) return id;

  std::size_t best_dim = 0;
  float best_spread = 0.0f;
  for (std::size_t d = 0; d < dim_; ++d) {
    float lo = points_[order_[begin] * dim_ + d], hi = lo;
    for (auto i = begin + 1; i < end; ++i) {
      const float v = points_[order_[i] * dim_ + d];
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    if (hi - lo > best_spread) {
      best_spread = hi - lo;
      best_dim = d;
    }
  }
  if (best_spread <= 0.0f) return id;  // all points coincide

  const auto mid = begin + (end - begin) / 2;
  auto key = [&](std::uint32_t row) { return points_[row * dim_ + best_dim]; };
  std::nth_element(order_.begin() + begin, order_.begin() + mid, order_.begin() + end,
                   [&](std::uint32_t a, std::uint32_t b) {
                     return key(a) < key(b) || (key(a) == key(b) && a < b);
                   });
  const double split = key(order_[mid]);
  const auto left = build(begin, mid);
  const auto right = build(mid, end);
  Node& node = nodes_[id];
  node.split_dim = static_cast<std::int32_t>(best_dim);
  node.split = split;
  node.left = left;
  node.right = right;
  return id;
}

std::optional<KdTree::Hit> KdTree::nearest(std::span<const double> query,
                                           const std::function<bool(std::size_t)>& skip) const {
  if (nodes_.empty()) return std::nullopt;
  if (query.size() != dim_) {
    throw std::invalid_argument("kd-tree: query has " + std::to_string(query.size()) +
                                " dims, index has " + std::to_string(dim_));
  }
  std::optional<Hit> best;
  search(0, query, skip, best);
  return best;
}

void KdTree::search(std::uint32_t id, std::span<const double> query,
                    const std::function<bool(std::size_t)>& skip,
                    std::optional<Hit>& best) const {
  const Node& node = nodes_[id];
  if (node.split_dim < 0) {
    for (auto i = node.begin; i < node.end; ++i) {
      const std::size_t row = order_[i];
      if (skip && skip(row)) continue;
      const double d2 = squared_distance(query, point(row));
      if (!best || d2 < best->dist2 || (d2 == best->dist2 && row < best->row)) best = Hit{row, d2};
    }
    return;
  }
  // Left holds coordinates <= split, right holds >= split.
  const double diff = query[static_cast<std::size_t>(node.split_dim)] - node.split;
  const auto near = diff < 0.0 ? node.left : node.right;
  const auto far = diff < 0.0 ? node.right : node.left;
  search(near, query, skip, best);
  // `<=` keeps equal-distance rows reachable so ties resolve by row index.
  if (!best || diff * diff <= best->dist2) search(far, query, skip, best);
}

std::size_t KdTree::depth() const {
  std::size_t deepest = 0;
  std::vector<std::pair<std::uint32_t, std::size_t>> stack;
  if (!nodes_.empty()) stack.emplace_back(0, 1);
  while (!stack.empty()) {
    auto [id, d] = stack.back();
    stack.pop_back();
    deepest = std::max(deepest, d);
    if (nodes_[id].split_dim >= 0) {
      stack.emplace_back(nodes_[id].left, d + 1);
      stack.emplace_back(nodes_[id].right, d + 1);
    }
  }
  return deepest;
}

}  // namespace jex
