#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "jex/error.hpp"
#include "jex/exemplar.hpp"
#include "jex/kdtree.hpp"

namespace fs = std::filesystem;
using namespace jex;

namespace {

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "jex_exemplar_test";
  fs::create_directories(dir);
  return dir / name;
}

// Reference: lowest row among the minimal squared distances.
std::optional<std::size_t> linear_scan(std::span<const float> pts, std::size_t dim,
                                       std::span<const double> q, std::optional<std::size_t> skip = {}) {
  std::optional<std::size_t> best;
  double best_d = 0.0;
  for (std::size_t r = 0; r < pts.size() / dim; ++r) {
    if (skip && *skip == r) continue;
    const double d = squared_distance(q, pts.subspan(r * dim, dim));
    if (!best || d < best_d) {
      best = r;
      best_d = d;
    }
  }
  return best;
}

std::vector<EmbeddingRecord> random_records(std::size_t n, std::size_t rows, std::size_t cols,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d;
  std::vector<EmbeddingRecord> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor e = Tensor::zeros({rows, cols});
    for (auto& v : e.data) v = static_cast<float>(d(rng));
    out.push_back({1000 + i, std::move(e)});
  }
  return out;
}

}  // namespace

TEST(KdTree, MatchesLinearScanOnRandomStores) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<std::size_t> n_dist(1, 300), d_dist(1, 12);
  std::uniform_int_distribution<int> coarse(-3, 3);
  for (int store = 0; store < 150; ++store) {
    const std::size_t n = n_dist(rng), dim = d_dist(rng);
    // Coarse integer grids force many exact ties.
    const bool ties = store % 3 == 0;
    std::normal_distribution<float> g;
    std::vector<float> pts(n * dim);
    for (auto& v : pts) v = ties ? static_cast<float>(coarse(rng)) : g(rng);
    KdTree tree(pts, dim);
    for (int k = 0; k < 40; ++k) {
      std::vector<double> q(dim);
      for (auto& v : q) v = ties ? coarse(rng) : g(rng);
      const auto hit = tree.nearest(q);
      ASSERT_TRUE(hit);
      EXPECT_EQ(hit->row, *linear_scan(pts, dim, q)) << "store " << store;
    }
  }
}

TEST(KdTree, SkipExcludesRows) {
  std::vector<float> pts = {0, 0, 1, 1, 5, 5};
  KdTree tree(pts, 2);
  std::vector<double> q = {0.1, 0.1};
  EXPECT_EQ(tree.nearest(q)->row, 0u);
  EXPECT_EQ(tree.nearest(q, [](std::size_t r) { return r == 0; })->row, 1u);
  EXPECT_FALSE(tree.nearest(q, [](std::size_t) { return true; }));
  EXPECT_FALSE(KdTree().nearest(q));
}

TEST(KdTree, DuplicatePointsReturnLowestRow) {
  std::vector<float> pts(40 * 3, 2.0f);
  KdTree tree(pts, 3, 4);
  std::vector<double> q = {2, 2, 2};
  EXPECT_EQ(tree.nearest(q)->row, 0u);
  EXPECT_EQ(tree.nearest(q, [](std::size_t r) { return r < 7; })->row, 7u);
}

TEST(KdTree, LargeTreeIsBalanced) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<float> u;
  std::vector<float> pts(4096 * 2);
  for (auto& v : pts) v = u(rng);
  KdTree tree(pts, 2);
  EXPECT_LE(tree.depth(), 10u);
}

TEST(CompactKey, IsMaxPoolOfFlattenedEmbedding) {
  Tensor e({2, 5}, {1, 9, 2, 3, 4, 8, 0, 7, 6, 5});
  EXPECT_EQ(compact_key(e, 5), (std::vector<double>{9, 3, 8, 7, 6}));
  EXPECT_EQ(compact_key(e, 1), (std::vector<double>{9}));
  EXPECT_EQ(compact_key(e, 10), e.data);
}

TEST(Store, SampleSizeIsCeilOfRate) {
  const auto recs = random_records(100, 2, 3, 1);
  EXPECT_EQ(build_store(recs, 0.1, 4, 7).size(), 10u);
  EXPECT_EQ(build_store(random_records(101, 2, 3, 1), 0.1, 4, 7).size(), 11u);
  EXPECT_EQ(build_store(recs, 1.0, 4, 7).size(), 100u);
  EXPECT_THROW(build_store(recs, 0.0, 4, 7), std::invalid_argument);
  EXPECT_THROW(build_store({}, 0.5, 4, 7), std::invalid_argument);
}

TEST(Store, SameSeedGivesIdenticalStores) {
  const auto recs = random_records(60, 3, 4, 2);
  const auto a = build_store(recs, 0.25, 5, 11), b = build_store(recs, 0.25, 5, 11);
  EXPECT_TRUE(std::equal(a.ids().begin(), a.ids().end(), b.ids().begin(), b.ids().end()));
  EXPECT_TRUE(std::equal(a.kappa().begin(), a.kappa().end(), b.kappa().begin(), b.kappa().end()));
  const auto c = build_store(recs, 0.25, 5, 12);
  EXPECT_FALSE(std::equal(a.ids().begin(), a.ids().end(), c.ids().begin(), c.ids().end()));
  EXPECT_TRUE(std::is_sorted(a.ids().begin(), a.ids().end()));
}

TEST(Store, KeysAreMaxPoolOfStoredRows) {
  const auto store = build_store(random_records(50, 4, 6, 3), 0.5, 7, 1);
  for (std::size_t r = 0; r < store.size(); ++r) {
    const auto row = store.rows().row(r);
    const std::vector<double> as_double(row.begin(), row.end());
    const auto pooled = maxpool1d(as_double, store.key_length());
    const auto key = store.key(r);
    ASSERT_EQ(key.size(), pooled.size());
    for (std::size_t i = 0; i < key.size(); ++i) EXPECT_EQ(key[i], static_cast<float>(pooled[i]));
  }
}

TEST(Store, NearestReadsOneRowAndHonorsExclusion) {
  const auto recs = random_records(80, 3, 5, 4);
  auto store = build_store(recs, 1.0, 6, 0);
  auto counter = std::make_shared<CountingRows>(store.row_source());
  store.set_row_source(counter);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    counter->reset();
    const auto hit = store.nearest(recs[i].embedding);
    EXPECT_EQ(counter->reads(), 1u);
    EXPECT_EQ(hit.id, recs[i].id);
    EXPECT_EQ(hit.key_distance, 0.0);
    counter->reset();
    const auto other = store.nearest(recs[i].embedding, recs[i].id);
    EXPECT_EQ(counter->reads(), 1u);
    EXPECT_NE(other.id, recs[i].id);
    // The returned embedding is the stored row of the returned id.
    const auto row = store.rows().row(other.row);
    EXPECT_EQ(other.embedding, std::vector<double>(row.begin(), row.end()));
  }
}

TEST(Store, ErrorsOnEmptyOrFullyExcluded) {
  const auto recs = random_records(1, 2, 2, 5);
  const auto store = build_store(recs, 1.0, 2, 0);
  EXPECT_THROW(store.nearest(recs[0].embedding, recs[0].id), std::invalid_argument);
  ExemplarStore empty;
  EXPECT_THROW(empty.nearest(recs[0].embedding), std::invalid_argument);
}

TEST(Store, SaveLoadRoundTripKeepsXiOnDisk) {
  const auto recs = random_records(40, 4, 5, 6);
  const auto store = build_store(recs, 0.5, 9, 3);
  const auto path = temp_file("store.jexs");
  save_store(store, path);
  const auto loaded = load_store(path);
  EXPECT_NE(dynamic_cast<const FileRows*>(loaded.row_source().get()), nullptr);
  ASSERT_EQ(loaded.size(), store.size());
  EXPECT_TRUE(std::equal(loaded.ids().begin(), loaded.ids().end(), store.ids().begin()));
  EXPECT_TRUE(std::equal(loaded.kappa().begin(), loaded.kappa().end(), store.kappa().begin()));
  for (std::size_t r = 0; r < store.size(); ++r) EXPECT_EQ(loaded.rows().row(r), store.rows().row(r));
  for (const auto& rec : recs) {
    const auto a = store.nearest(rec.embedding), b = loaded.nearest(rec.embedding);
    EXPECT_EQ(a.id, b.id);
    EXPECT_EQ(a.embedding, b.embedding);
  }
  const auto in_memory = load_store(path, true);
  EXPECT_NE(dynamic_cast<const MemoryRows*>(in_memory.row_source().get()), nullptr);
}

TEST(Store, CorruptFilesAreDataErrors) {
  const auto store = build_store(random_records(10, 2, 4, 7), 1.0, 3, 0);
  const auto path = temp_file("good.jexs");
  save_store(store, path);
  std::ifstream is(path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  auto write = [&](const std::string& name, const std::string& content) {
    const auto p = temp_file(name);
    std::ofstream os(p, std::ios::binary);
    os << content;
    return p;
  };
  EXPECT_THROW(load_store(write("short.jexs", bytes.substr(0, bytes.size() - 5))), DataError);
  EXPECT_THROW(load_store(write("long.jexs", bytes + "zz")), DataError);
  std::string magic = bytes;
  magic[1] = '?';
  EXPECT_THROW(load_store(write("magic.jexs", magic)), DataError);
  // Flip one stored embedding value so its key no longer matches.
  std::string tampered = bytes;
  const std::size_t last_float = tampered.size() - 4;
  float v = 1e6f;
  std::memcpy(&tampered[last_float], &v, 4);
  EXPECT_THROW(load_store(write("tampered.jexs", tampered)), DataError);
}
