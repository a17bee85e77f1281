#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>

#include "sscd/index.hpp"
#include "support/synthetic.hpp"

using namespace sscd;
using sscd::testing::TempDir;

namespace {

/// O(n^2) reference: every other vector scored with a plain loop, sorted by
/// similarity then id.
std::vector<NeighborList> brute_force(const std::vector<EmbeddingRecord>& recs, std::size_t top_n) {
  std::vector<NeighborList> out;
  for (const auto& q : recs) {
    std::vector<Neighbor> all;
    for (const auto& r : recs) {
      if (r.fragment_id == q.fragment_id) continue;
      long double s = 0;
      for (std::size_t i = 0; i < q.vector.size(); ++i) s += static_cast<long double>(q.vector[i]) * r.vector[i];
      all.push_back({r.fragment_id, static_cast<double>(s)});
    }
    std::sort(all.begin(), all.end(), [](const Neighbor& a, const Neighbor& b) {
      return a.similarity != b.similarity ? a.similarity > b.similarity : a.fragment_id < b.fragment_id;
    });
    if (all.size() > top_n) all.resize(top_n);
    out.push_back({q.fragment_id, all});
  }
  return out;
}

void expect_same(const std::vector<NeighborList>& got, const std::vector<NeighborList>& want) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t q = 0; q < got.size(); ++q) {
    EXPECT_EQ(got[q].query_fragment_id, want[q].query_fragment_id);
    ASSERT_EQ(got[q].neighbors.size(), want[q].neighbors.size());
    for (std::size_t k = 0; k < got[q].neighbors.size(); ++k) {
      EXPECT_EQ(got[q].neighbors[k].fragment_id, want[q].neighbors[k].fragment_id);
      EXPECT_NEAR(got[q].neighbors[k].similarity, want[q].neighbors[k].similarity, 1e-7);
    }
  }
}

EmbeddingRecord rec(const std::string& id, Vector v) {
  normalize(v);
  return {id, "p", "", std::move(v)};
}

}  // namespace

TEST(Cosine, Examples) {
  const Vector v{0.3f, -1.2f, 2.0f};
  EXPECT_NEAR(cosine_similarity(v, v), 1.0, 1e-9);
  EXPECT_DOUBLE_EQ(cosine_similarity(Vector{1, 0}, Vector{0, 1}), 0.0);
  EXPECT_NEAR(cosine_similarity(Vector{1, 0}, Vector{1, 1}), 0.70710678, 1e-8);
  EXPECT_DOUBLE_EQ(cosine_similarity(Vector{1, 2}, Vector{3, -1}), cosine_similarity(Vector{3, -1}, Vector{1, 2}));
  EXPECT_THROW(cosine_similarity(Vector{0, 0}, Vector{1, 0}), std::domain_error);
  EXPECT_THROW(cosine_similarity(Vector{1, 0}, Vector{1, 0, 0}), std::invalid_argument);
}

TEST(Knn, SingleFragmentHasNoNeighbours) {
  auto index = VectorIndex::from_records({rec("only", {1, 0, 0})});
  auto lists = knn_search(index, 10);
  ASSERT_EQ(lists.size(), 1u);
  EXPECT_TRUE(lists[0].neighbors.empty());
}

TEST(Knn, HandComputedGeometry) {
  auto index = VectorIndex::from_records(
      {rec("A", {1, 0, 0}), rec("B", {0, 1, 0}), rec("C", {0, 0, 1}), rec("D", {1, 1, 0})});
  for (auto backend : {SearchBackend::kExact, SearchBackend::kApproximate}) {
    KnnOptions opts;
    opts.backend = backend;
    auto lists = knn_search(index, 10, opts);
    const auto& d = lists[3];
    ASSERT_EQ(d.query_fragment_id, "D");
    ASSERT_EQ(d.neighbors.size(), 3u);
    EXPECT_EQ(d.neighbors[0].fragment_id, "A");
    EXPECT_EQ(d.neighbors[1].fragment_id, "B");
    EXPECT_EQ(d.neighbors[2].fragment_id, "C");
    EXPECT_NEAR(d.neighbors[0].similarity, 0.70710678, 1e-7);
    EXPECT_NEAR(d.neighbors[1].similarity, 0.70710678, 1e-7);
    EXPECT_NEAR(d.neighbors[2].similarity, 0.0, 1e-7);
  }
}

TEST(Knn, ExactMatchesBruteForce) {
  auto recs = sscd::testing::random_records(100, 24, 7);
  auto index = VectorIndex::from_records(recs);
  for (std::size_t n : {1u, 5u, 10u, 99u, 150u}) expect_same(knn_search(index, n), brute_force(recs, n));
}

TEST(Knn, ResultsIndependentOfThreads) {
  auto index = VectorIndex::from_records(sscd::testing::random_records(300, 16, 3));
  for (auto backend : {SearchBackend::kExact, SearchBackend::kApproximate}) {
    KnnOptions one, many;
    one.backend = many.backend = backend;
    one.threads = 1;
    many.threads = 6;
    EXPECT_EQ(knn_search(index, 10, one), knn_search(index, 10, many));
  }
}

TEST(Knn, DuplicatesKeptSelfExcludedById) {
  auto index = VectorIndex::from_records({rec("x", {1, 2, 3}), rec("y", {1, 2, 3}), rec("z", {-3, 0, 1})});
  auto lists = knn_search(index, 1);
  EXPECT_EQ(lists[0].neighbors[0].fragment_id, "y");
  EXPECT_EQ(lists[1].neighbors[0].fragment_id, "x");
  EXPECT_NEAR(lists[0].neighbors[0].similarity, 1.0, 1e-6);
}

TEST(Knn, ApproximateRecallOnSmallSet) {
  auto recs = sscd::testing::random_records(2000, 32, 11);
  auto index = VectorIndex::from_records(recs);
  auto exact = knn_search(index, 10);
  KnnOptions opts;
  opts.backend = SearchBackend::kApproximate;
  auto approx = knn_search(index, 10, opts);
  std::size_t hit = 0, total = 0;
  for (std::size_t q = 0; q < exact.size(); ++q) {
    std::set<std::string> want;
    for (const auto& n : exact[q].neighbors) want.insert(n.fragment_id);
    for (const auto& n : approx[q].neighbors) hit += want.count(n.fragment_id);
    total += want.size();
    EXPECT_TRUE(std::is_sorted(approx[q].neighbors.begin(), approx[q].neighbors.end(),
                               [](const Neighbor& a, const Neighbor& b) { return a.similarity > b.similarity; }));
  }
  EXPECT_GE(static_cast<double>(hit) / static_cast<double>(total), 0.95);
}

TEST(VectorIndexTest, ValidatesOnConstruction) {
  VectorIndex index("p", 3);
  index.add("a", Vector{1, 0, 0});
  EXPECT_THROW(index.add("b", Vector{1, 0}), UsageError);
  EXPECT_THROW(index.add("a", Vector{0, 1, 0}), UsageError);
  EXPECT_THROW(index.add("c", Vector{2, 0, 0}), UsageError);
  EXPECT_THROW(knn_search(VectorIndex("p", 3), 1), UsageError);
  EXPECT_THROW(knn_search(index, 0), UsageError);
  EXPECT_EQ(parse_backend("naive"), SearchBackend::kExact);
  EXPECT_EQ(parse_backend("hnsw"), SearchBackend::kApproximate);
  EXPECT_THROW(parse_backend("ivf"), UsageError);
}

TEST(ThresholdFilter, Examples) {
  std::vector<NeighborList> lists{{"q", {{"a", 0.95}, {"b", 0.90}, {"c", 0.40}}}};
  auto kept = threshold_filter(lists, 0.91, 10);
  ASSERT_EQ(kept[0].neighbors.size(), 1u);
  EXPECT_EQ(kept[0].neighbors[0].fragment_id, "a");

  auto all = threshold_filter(lists, 0.0, 10);
  EXPECT_EQ(all, lists);
  auto top2 = threshold_filter(lists, 0.0, 2);
  EXPECT_EQ(top2[0].neighbors.size(), 2u);

  EXPECT_THROW(threshold_filter(lists, 1.01, 10), std::invalid_argument);
  EXPECT_THROW(threshold_filter(lists, -0.1, 10), std::invalid_argument);
}

TEST(ThresholdFilter, ThresholdOneKeepsOnlyDuplicates) {
  auto recs = sscd::testing::random_records(50, 16, 5);
  recs.push_back({"dup", "test", "", recs[7].vector});
  auto lists = knn_search(VectorIndex::from_records(recs), 10);
  std::size_t survivors = 0;
  for (const auto& l : threshold_filter(lists, 1.0, 10)) {
    for (const auto& n : l.neighbors) {
      ++survivors;
      EXPECT_TRUE((l.query_fragment_id == "dup" && n.fragment_id == recs[7].fragment_id) ||
                  (n.fragment_id == "dup" && l.query_fragment_id == recs[7].fragment_id));
    }
  }
  EXPECT_EQ(survivors, 2u);
}

TEST(ThresholdFilter, Monotone) {
  auto lists = knn_search(VectorIndex::from_records(sscd::testing::random_records(120, 8, 9)), 10);
  for (std::size_t q = 0; q < lists.size(); ++q) {
    std::size_t prev = SIZE_MAX;
    for (int t = 0; t <= 100; t += 5) {
      const auto n = threshold_filter(lists, t / 100.0, 10)[q].neighbors.size();
      EXPECT_LE(n, prev);
      prev = n;
    }
    prev = 0;
    for (std::size_t k = 1; k <= 10; ++k) {
      const auto n = threshold_filter(lists, 0.2, k)[q].neighbors.size();
      EXPECT_GE(n, prev);
      prev = n;
    }
  }
}

TEST(CaptureFile, RoundTrip) {
  TempDir dir;
  auto lists = knn_search(VectorIndex::from_records(sscd::testing::random_records(30, 8, 2)), 5);
  write_capture(lists, dir / "cap.jsonl");
  EXPECT_EQ(read_capture(dir / "cap.jsonl"), lists);
  const auto first = read_file(dir / "cap.jsonl").substr(0, 60);
  EXPECT_EQ(first.rfind("{\"query_fragment_id\":\"f000000\",\"neighbors\":[[", 0), 0u);
}
