#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace jex {

// Exact nearest-neighbour index over the rows of a row-major float matrix.
// Splits on the dimension of largest spread at the median; leaves hold up
// to `leaf_size` points. Queries return the lowest row index among rows at
// the minimal squared Euclidean distance, identical to a linear scan.
class KdTree {
 public:
  struct Hit {
    std::size_t row = 0;
    double dist2 = 0.0;
  };

  KdTree() = default;
  KdTree(std::vector<float> points, std::size_t dim, std::size_t leaf_size = 16);

  // `skip(row)` excludes rows from consideration. Returns nullopt when the
  // tree is empty or every row is skipped.
  std::optional<Hit> nearest(std::span<const double> query,
                             const std::function<bool(std::size_t)>& skip = {}) const;

  std::size_t size() const { return order_.size(); }
  std::span<const float> points() const { return points_; }
  std::span<const float> point(std::size_t row) const {
    return std::span<const float>(points_).subspan(row * dim_, dim_);
  }
  std::size_t dim() const { return dim_; }
  std::size_t depth() const;

 private:
  struct Node {
    std::uint32_t begin = 0, end = 0;
    std::int32_t split_dim = -1;  // -1 marks a leaf
    double split = 0.0;
    std::uint32_t left = 0, right = 0;
  };

  std::uint32_t build(std::uint32_t begin, std::uint32_t end);
  void search(std::uint32_t node, std::span<const double> query,
              const std::function<bool(std::size_t)>& skip, std::optional<Hit>& best) const;

  std::vector<float> points_;
  std::size_t dim_ = 0;
  std::size_t leaf_size_ = 16;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

// Squared Euclidean distance, accumulated in index order.
double squared_distance(std::span<const double> a, std::span<const float> b);

}  // namespace jex
