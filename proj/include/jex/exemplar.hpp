#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "jex/kdtree.hpp"
#include "jex/tensor.hpp"

namespace jex {

inline constexpr std::size_t kDefaultKeyLength = 140;
inline constexpr double kDefaultSampleRate = 0.1;

// Random access to stored joint embeddings, one row per exemplar.
class RowSource {
 public:
  virtual ~RowSource() = default;
  virtual std::size_t rows() const = 0;
  virtual std::size_t dim() const = 0;
  virtual std::vector<float> row(std::size_t i) const = 0;
};

class MemoryRows final : public RowSource {
 public:
  MemoryRows(std::vector<float> data, std::size_t dim);
  std::size_t rows() const override { return dim_ ? data_.size() / dim_ : 0; }
  std::size_t dim() const override { return dim_; }
  std::vector<float> row(std::size_t i) const override;

 private:
  std::vector<float> data_;
  std::size_t dim_;
};

// Rows fetched by offset from a store file; nothing else is kept resident.
class FileRows final : public RowSource {
 public:
  FileRows(const std::filesystem::path& path, std::uint64_t offset, std::size_t rows,
           std::size_t dim);
  std::size_t rows() const override { return rows_; }
  std::size_t dim() const override { return dim_; }
  std::vector<float> row(std::size_t i) const override;

 private:
  mutable std::mutex mutex_;
  mutable std::ifstream stream_;
  std::filesystem::path path_;
  std::uint64_t offset_;
  std::size_t rows_, dim_;
};

// Decorator that counts row reads.
class CountingRows final : public RowSource {
 public:
  explicit CountingRows(std::shared_ptr<const RowSource> inner) : inner_(std::move(inner)) {}
  std::size_t rows() const override { return inner_->rows(); }
  std::size_t dim() const override { return inner_->dim(); }
  std::vector<float> row(std::size_t i) const override {
    ++reads_;
    return inner_->row(i);
  }
  std::size_t reads() const { return reads_; }
  void reset() { reads_ = 0; }

 private:
  std::shared_ptr<const RowSource> inner_;
  mutable std::atomic<std::size_t> reads_{0};
};

// Key for a joint embedding: flatten grid-major/channel-minor, then max-pool
// into `key_length` buckets.
std::vector<double> compact_key(const Tensor& embedding, std::size_t key_length);

struct Neighbor {
  std::vector<double> embedding;  // the stored joint embedding (not its key)
  std::uint64_t id = 0;
  std::size_t row = 0;
  double key_distance = 0.0;
};

// Bank of stored joint embeddings (xi) with max-pooled soft keys (kappa) and
// an exact k-d tree over the keys.
class ExemplarStore {
 public:
  ExemplarStore() = default;
  ExemplarStore(std::vector<std::uint64_t> ids, std::shared_ptr<const RowSource> xi,
                std::vector<float> kappa, std::size_t key_length);

  std::size_t size() const { return ids_.size(); }
  bool empty() const { return ids_.empty(); }
  std::size_t dim() const { return xi_ ? xi_->dim() : 0; }
  std::size_t key_length() const { return key_length_; }
  std::span<const std::uint64_t> ids() const { return ids_; }
  std::span<const float> kappa() const { return index_.points(); }
  std::span<const float> key(std::size_t row) const { return index_.point(row); }
  const RowSource& rows() const { return *xi_; }
  std::shared_ptr<const RowSource> row_source() const { return xi_; }
  std::optional<std::size_t> row_of(std::uint64_t id) const;

  double sample_rate = 1.0;
  std::size_t k = 1;

  // Nearest stored exemplar to `embedding` in key space. Rows whose id
  // equals `exclude_id` are skipped. Reads exactly one xi row.
  Neighbor nearest(const Tensor& embedding, std::optional<std::uint64_t> exclude_id = {}) const;
  Neighbor nearest_key(std::span<const double> key,
                       std::optional<std::uint64_t> exclude_id = {}) const;

  // Swap the xi backing (e.g. to wrap it in a CountingRows).
  void set_row_source(std::shared_ptr<const RowSource> xi);

 private:
  std::vector<std::uint64_t> ids_;
  std::shared_ptr<const RowSource> xi_;
  KdTree index_;
  std::size_t key_length_ = 0;
};

struct EmbeddingRecord {
  std::uint64_t id = 0;
  Tensor embedding;  // G x t_e
};

// Stores ceil(sample_rate * n) records chosen uniformly without replacement
// (kept in input order). rate 1.0 keeps everything.
ExemplarStore build_store(std::span<const EmbeddingRecord> embeddings, double sample_rate,
                          std::size_t key_length, std::uint64_t seed);

// Store file: "JEXS", u32 version, u32 n, u32 d, u32 key length, n x u64
// ids, n x key f32 keys, n x d f32 embeddings (little-endian).
void save_store(const ExemplarStore& store, const std::filesystem::path& path);
// Keys and ids are loaded; embeddings stay on disk unless `xi_in_memory`.
// Every stored key is checked against its embedding row.
ExemplarStore load_store(const std::filesystem::path& path, bool xi_in_memory = false);

}  // namespace jex
