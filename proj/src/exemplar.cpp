#include "jex/exemplar.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <unordered_set>

#include "jex/binio.hpp"
#include "jex/error.hpp"

namespace jex {

MemoryRows::MemoryRows(std::vector<float> data, std::size_t dim) : data_(std::move(data)), dim_(dim) {
  if (dim_ == 0 || data_.size() % dim_ != 0) throw std::invalid_argument("ragged embedding rows");
}

std::vector<float> MemoryRows::row(std::size_t i) const {
  if (i >= rows()) throw std::out_of_range("embedding row out of range");
  return {data_.begin() + i * dim_, data_.begin() + (i + 1) * dim_};
}

FileRows::FileRows(const std::filesystem::path& path, std::uint64_t offset, std::size_t rows,
                   std::size_t dim)
    : stream_(path, std::ios::binary), path_(path), offset_(offset), rows_(rows), dim_(dim) {
  if (!stream_) throw DataError("cannot open store file " + path.string());
}

std::vector<float> FileRows::row(std::size_t i) const {
  if (i >= rows_) throw std::out_of_range("embedding row out of range");
  std::vector<float> out(dim_);
  std::lock_guard lock(mutex_);
  stream_.clear();
  stream_.seekg(static_cast<std::streamoff>(offset_ + i * dim_ * sizeof(float)));
  binio::read_exact(stream_, out.data(), dim_ * sizeof(float), "embedding row of " + path_.string());
  return out;
}

std::vector<double> compact_key(const Tensor& embedding, std::size_t key_length) {
  if (key_length == 0) throw std::invalid_argument("compact_key: key length must be positive");
  if (key_length > embedding.size()) {
    throw std::invalid_argument("compact_key: key length " + std::to_string(key_length) +
                                " larger than flattened embedding " +
                                std::to_string(embedding.size()));
  }
  return maxpool1d(embedding.data, key_length);
}

ExemplarStore::ExemplarStore(std::vector<std::uint64_t> ids, std::shared_ptr<const RowSource> xi,
                             std::vector<float> kappa, std::size_t key_length)
    : ids_(std::move(ids)), xi_(std::move(xi)), key_length_(key_length) {
  if (!xi_) throw std::invalid_argument("exemplar store needs an embedding source");
  if (xi_->rows() != ids_.size() || kappa.size() != ids_.size() * key_length_) {
    throw std::invalid_argument("exemplar store: ids, keys and embeddings disagree in row count");
  }
  index_ = KdTree(std::move(kappa), key_length_);
}

std::optional<std::size_t> ExemplarStore::row_of(std::uint64_t id) const {
  auto it = std::find(ids_.begin(), ids_.end(), id);
  if (it == ids_.end()) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

void ExemplarStore::set_row_source(std::shared_ptr<const RowSource> xi) {
  if (!xi || xi->rows() != size() || (xi_ && xi->dim() != xi_->dim())) {
    throw std::invalid_argument("replacement embedding source has a different shape");
  }
  xi_ = std::move(xi);
}

Neighbor ExemplarStore::nearest(const Tensor& embedding, std::optional<std::uint64_t> exclude_id) const {
  if (empty()) throw std::invalid_argument("nearest: exemplar store is empty");
  if (embedding.size() != dim()) {
    throw std::invalid_argument("nearest: embedding has " + std::to_string(embedding.size()) +
                                " values, store rows have " + std::to_string(dim()));
  }
  return nearest_key(compact_key(embedding, key_length_), exclude_id);
}

Neighbor ExemplarStore::nearest_key(std::span<const double> key,
                                    std::optional<std::uint64_t> exclude_id) const {
  if (empty()) throw std::invalid_argument("nearest: exemplar store is empty");
  std::function<bool(std::size_t)> skip;
  if (exclude_id) skip = [this, ex = *exclude_id](std::size_t row) { return ids_[row] == ex; };
  const auto hit = index_.nearest(key, skip);
  if (!hit) throw std::invalid_argument("nearest: all rows excluded");
  const auto raw = xi_->row(hit->row);
  return Neighbor{std::vector<double>(raw.begin(), raw.end()), ids_[hit->row], hit->row,
                  std::sqrt(hit->dist2)};
}

ExemplarStore build_store(std::span<const EmbeddingRecord> embeddings, double sample_rate,
                          std::size_t key_length, std::uint64_t seed) {
  if (embeddings.empty()) throw std::invalid_argument("build_store: no embeddings");
  if (!(sample_rate > 0.0 && sample_rate <= 1.0)) {
    throw std::invalid_argument("build_store: sample rate must be in (0, 1]");
  }
  const std::size_t total = embeddings.size();
  const auto want = static_cast<std::size_t>(
      std::ceil(sample_rate * static_cast<double>(total) - 1e-9));
  const std::size_t n = std::clamp<std::size_t>(want, 1, total);

  std::vector<std::size_t> picked(total);
  std::iota(picked.begin(), picked.end(), 0);
  if (n < total) {
    std::mt19937_64 rng(seed);
    for (std::size_t i = 0; i < n; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, total - 1);
      std::swap(picked[i], picked[pick(rng)]);
    }
    picked.resize(n);
    std::sort(picked.begin(), picked.end());
  }

  const std::size_t d = embeddings[picked[0]].embedding.size();
  std::vector<std::uint64_t> ids;
  std::vector<float> xi;
  std::vector<float> kappa;
  std::unordered_set<std::uint64_t> seen;
  ids.reserve(n);
  xi.reserve(n * d);
  kappa.reserve(n * key_length);
  for (auto i : picked) {
    const auto& rec = embeddings[i];
    if (rec.embedding.size() != d) throw std::invalid_argument("build_store: embeddings differ in size");
    if (!seen.insert(rec.id).second) {
      throw std::invalid_argument("build_store: duplicate triplet id " + std::to_string(rec.id));
    }
    ids.push_back(rec.id);
    std::vector<double> stored(d);
    for (std::size_t j = 0; j < d; ++j) {
      const auto f = static_cast<float>(rec.embedding.data[j]);
      xi.push_back(f);
      stored[j] = f;
    }
    for (double v : maxpool1d(stored, key_length)) kappa.push_back(static_cast<float>(v));
  }
  ExemplarStore store(std::move(ids), std::make_shared<MemoryRows>(std::move(xi), d),
                      std::move(kappa), key_length);
  store.sample_rate = sample_rate;
  return store;
}

namespace {
constexpr char kStoreMagic[5] = "JEXS";
constexpr std::uint32_t kStoreVersion = 1;
constexpr std::uint64_t kStoreHeaderBytes = 4 + 4 * 4;
}  // namespace

void save_store(const ExemplarStore& store, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  binio::put_magic(os, kStoreMagic);
  binio::put<std::uint32_t>(os, kStoreVersion);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(store.size()));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(store.dim()));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(store.key_length()));
  for (auto id : store.ids()) binio::put<std::uint64_t>(os, id);
  for (float v : store.kappa()) binio::put<float>(os, v);
  for (std::size_t r = 0; r < store.size(); ++r) {
    for (float v : store.rows().row(r)) binio::put<float>(os, v);
  }
  if (!os) throw DataError("write failed for " + path.string());
}

ExemplarStore load_store(const std::filesystem::path& path, bool xi_in_memory) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open store file " + path.string());
  binio::expect_magic(is, kStoreMagic);
  const auto version = binio::get<std::uint32_t>(is, "version");
  if (version != kStoreVersion) throw DataError("version mismatch: store version " + std::to_string(version));
  const auto n = binio::get<std::uint32_t>(is, "row count");
  const auto d = binio::get<std::uint32_t>(is, "embedding size");
  const auto rho = binio::get<std::uint32_t>(is, "key length");
  if (n == 0 || d == 0 || rho == 0 || rho > d) throw DataError("corrupted store header");

  const std::uint64_t expected = kStoreHeaderBytes + std::uint64_t{n} * 8 +
                                 std::uint64_t{n} * rho * 4 + std::uint64_t{n} * d * 4;
  const auto actual = std::filesystem::file_size(path);
  if (actual < expected) throw DataError("truncated payload in store " + path.string());
  if (actual > expected) throw DataError("corrupted payload: trailing bytes in " + path.string());

  std::vector<std::uint64_t> ids(n);
  binio::read_exact(is, ids.data(), ids.size() * sizeof(std::uint64_t), "store ids");
  std::vector<float> kappa(std::size_t{n} * rho);
  binio::read_exact(is, kappa.data(), kappa.size() * sizeof(float), "store keys");
  const std::uint64_t xi_offset = static_cast<std::uint64_t>(is.tellg());

  std::unordered_set<std::uint64_t> seen;
  for (auto id : ids) {
    if (!seen.insert(id).second) throw DataError("corrupted payload: duplicate id in store");
  }

  // Stream the embedding block once to validate keys; keep it only on request.
  std::vector<float> resident;
  std::vector<float> row(d);
  std::vector<double> as_double(d);
  for (std::size_t r = 0; r < n; ++r) {
    binio::read_exact(is, row.data(), d * sizeof(float), "store embeddings");
    std::copy(row.begin(), row.end(), as_double.begin());
    const auto key = maxpool1d(as_double, rho);
    for (std::size_t j = 0; j < rho; ++j) {
      if (static_cast<float>(key[j]) != kappa[r * rho + j]) {
        throw DataError("corrupted payload: key row " + std::to_string(r) +
                        " does not match its embedding");
      }
    }
    if (xi_in_memory) resident.insert(resident.end(), row.begin(), row.end());
  }

  std::shared_ptr<const RowSource> xi;
  if (xi_in_memory) {
    xi = std::make_shared<MemoryRows>(std::move(resident), d);
  } else {
    xi = std::make_shared<FileRows>(path, xi_offset, n, d);
  }
  return ExemplarStore(std::move(ids), std::move(xi), std::move(kappa), rho);
}

}  // namespace jex
