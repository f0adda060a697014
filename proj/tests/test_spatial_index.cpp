#include "contconv/spatial_index.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <set>

using namespace contconv;
using contconv::testing::uniform_points;

namespace {

std::span<const double> row(const Eigen::MatrixXd& q, std::vector<double>& buf, Index i) {
  buf.assign(static_cast<std::size_t>(q.cols()), 0.0);
  for (Index d = 0; d < q.cols(); ++d) buf[static_cast<std::size_t>(d)] = q(i, d);
  return buf;
}

std::vector<Index> ids(const std::vector<Neighbor>& v) {
  std::vector<Index> out;
  for (const auto& n : v) out.push_back(n.index);
  return out;
}

}  // namespace

TEST(KdTree, EmptyPointSetIsAnError) {
  EXPECT_THROW(build_kdtree(Eigen::MatrixXd(0, 3)), ShapeError);
}

TEST(KdTree, SingletonIsOneLeaf) {
  const auto tree = build_kdtree(Eigen::MatrixXd::Zero(1, 3));
  ASSERT_EQ(tree.nodes().size(), 1u);
  EXPECT_TRUE(tree.nodes()[0].is_leaf());
  EXPECT_EQ(tree.permutation(), std::vector<Index>{0});
  const std::vector<double> q{0, 0, 0};
  const auto r = knn_query(tree, q, 1);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].index, 0);
  EXPECT_EQ(r[0].distance, 0.0);
}

TEST(KdTree, UnitSquareMatchesBruteForceForAllK) {
  Eigen::MatrixXd sq(4, 2);
  sq << 0, 0, 1, 0, 0, 1, 1, 1;
  const auto tree = build_kdtree(sq, 1);
  std::vector<double> buf;
  for (Index qi = 0; qi < 4; ++qi) {
    for (int k = 1; k <= 4; ++k) {
      const auto q = row(sq, buf, qi);
      EXPECT_EQ(knn_query(tree, q, k), brute_force_knn(sq, q, k)) << "query " << qi << " k " << k;
    }
  }
}

TEST(KdTree, RandomCloudKnnMatchesBruteForce) {
  std::mt19937_64 rng(42);
  const auto pts = uniform_points(1000, 3, rng);
  const auto queries = uniform_points(20, 3, rng);
  const auto tree = build_kdtree(pts);
  std::vector<double> buf;
  for (Index i = 0; i < queries.rows(); ++i) {
    const auto q = row(queries, buf, i);
    EXPECT_EQ(ids(knn_query(tree, q, 50)), ids(brute_force_knn(pts, q, 50)));
  }
}

TEST(KdTree, KnnHandComputedCases) {
  Eigen::MatrixXd line(3, 1);
  line << 0, 1, 2;
  const auto tree = build_kdtree(line, 1);
  const std::vector<double> q{0.9};
  EXPECT_EQ(ids(knn_query(tree, q, 2)), (std::vector<Index>{1, 0}));
  // k > N saturates at all points, still sorted.
  EXPECT_EQ(ids(knn_query(tree, q, 10)), (std::vector<Index>{1, 0, 2}));
  const std::vector<double> self{2.0};
  const auto r = knn_query(tree, self, 1);
  EXPECT_EQ(r[0].index, 2);
  EXPECT_EQ(r[0].distance, 0.0);
}

TEST(KdTree, TiesBreakByIndex) {
  // Duplicated points and equidistant neighbours.
  Eigen::MatrixXd p(6, 1);
  p << 1, -1, 1, -1, 0, 1;
  const auto tree = build_kdtree(p, 2);
  const std::vector<double> q{0.0};
  EXPECT_EQ(ids(knn_query(tree, q, 6)), (std::vector<Index>{4, 0, 1, 2, 3, 5}));
  EXPECT_EQ(ids(knn_query(tree, q, 3)), (std::vector<Index>{4, 0, 1}));
}

TEST(KdTree, RadiusQueries) {
  Eigen::MatrixXd sq(4, 2);
  sq << 0, 0, 1, 0, 0, 1, 1, 1;
  const auto tree = build_kdtree(sq, 1);
  const std::vector<double> center{0.5, 0.5};
  EXPECT_EQ(ids(radius_query(tree, center, 0.8)), (std::vector<Index>{0, 1, 2, 3}));
  EXPECT_TRUE(radius_query(tree, center, 0.7).empty());
  // Strict inequality: a point exactly at distance r is excluded.
  const std::vector<double> corner{0.0, 0.0};
  EXPECT_EQ(ids(radius_query(tree, corner, 1.0)), (std::vector<Index>{0}));
  EXPECT_THROW(radius_query(tree, corner, 0.0), ShapeError);
}

TEST(KdTree, RandomCloudRadiusMatchesBruteForce) {
  std::mt19937_64 rng(42);
  const auto pts = uniform_points(1000, 3, rng);
  const auto queries = uniform_points(20, 3, rng);
  const auto tree = build_kdtree(pts);
  std::vector<double> buf;
  for (Index i = 0; i < queries.rows(); ++i) {
    const auto q = row(queries, buf, i);
    const auto got = radius_query(tree, q, 0.1);
    EXPECT_EQ(got, brute_force_radius(pts, q, 0.1));
    for (const auto& n : got) EXPECT_LT(n.distance, 0.1);
  }
}

TEST(KdTree, StructuralInvariants) {
  std::mt19937_64 rng(3);
  const auto pts = uniform_points(777, 4, rng, -5, 5);
  const auto tree = build_kdtree(pts);
  auto perm = tree.permutation();
  std::sort(perm.begin(), perm.end());
  for (Index i = 0; i < pts.rows(); ++i) ASSERT_EQ(perm[static_cast<std::size_t>(i)], i);

  // Leaves tile [0, N) exactly once; split values lie inside the node box.
  std::vector<int> covered(static_cast<std::size_t>(pts.rows()), 0);
  for (std::size_t n = 0; n < tree.nodes().size(); ++n) {
    const auto& node = tree.nodes()[n];
    if (node.is_leaf()) {
      EXPECT_LE(node.end - node.begin, tree.leaf_size());
      for (Index p = node.begin; p < node.end; ++p) covered[static_cast<std::size_t>(p)]++;
    } else {
      const auto b = tree.bounds(static_cast<int>(n));
      EXPECT_GE(node.split_value, b[static_cast<std::size_t>(node.split_dim)]);
      EXPECT_LE(node.split_value, b[static_cast<std::size_t>(tree.dim() + node.split_dim)]);
    }
  }
  for (int c : covered) EXPECT_EQ(c, 1);
}

// Property sweep: many small clouds, including heavy duplication.
TEST(KdTree, PropertyKnnAndRadiusAgreeWithBruteForce) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> n_dist(1, 300);
  std::uniform_int_distribution<int> d_dist(1, 4);
  std::uniform_int_distribution<int> k_dist(1, 64);
  std::vector<double> buf;
  for (int trial = 0; trial < 60; ++trial) {
    const Index n = n_dist(rng);
    const Index d = d_dist(rng);
    Eigen::MatrixXd pts = uniform_points(n, d, rng);
    if (trial % 3 == 0) pts = (pts * 4.0).array().round() / 4.0;  // lattice with ties
    const auto tree = build_kdtree(pts);
    const auto queries = uniform_points(5, d, rng);
    for (Index qi = 0; qi < queries.rows(); ++qi) {
      const auto q = row(queries, buf, qi);
      const int k = k_dist(rng);
      const auto a = knn_query(tree, q, k);
      const auto b = brute_force_knn(pts, q, k);
      ASSERT_EQ(ids(a), ids(b));
      for (std::size_t t = 0; t < a.size(); ++t) EXPECT_EQ(a[t].distance, b[t].distance);
      EXPECT_EQ(radius_query(tree, q, 0.3), brute_force_radius(pts, q, 0.3));
    }
  }
}

TEST(NeighborIndex, BuildIsThreadCountIndependent) {
  std::mt19937_64 rng(9);
  const auto pts = uniform_points(500, 3, rng);
  const auto a = build_neighbors(pts, pts, Window::knn(8), 1);
  const auto b = build_neighbors(pts, pts, Window::knn(8), 4);
  EXPECT_EQ(a.row_splits, b.row_splits);
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_TRUE(a.offsets == b.offsets);
  // Self-inclusion with a zero offset.
  for (Index i = 0; i < pts.rows(); ++i) {
    EXPECT_EQ(a.indices[static_cast<std::size_t>(a.row_begin(i))], i);
    EXPECT_EQ(a.offsets.row(a.row_begin(i)).norm(), 0.0);
  }
}

TEST(NeighborIndex, RadiusRowsMayBeEmpty) {
  Eigen::MatrixXd in(2, 2);
  in << 0, 0, 1, 0;
  Eigen::MatrixXd out(2, 2);
  out << 0.1, 0, 5, 5;
  const auto nbr = build_neighbors(in, out, Window::ball(0.5));
  EXPECT_EQ(nbr.row_size(0), 1);
  EXPECT_EQ(nbr.row_size(1), 0);
  EXPECT_DOUBLE_EQ(nbr.offsets(0, 0), 0.1);
}
