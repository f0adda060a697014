#pragma once

#include "contconv/types.hpp"

#include <span>
#include <vector>

namespace contconv {

/// Locality window restricting kernel support: K nearest neighbours or an
/// open ball of radius r (distance strictly less than r).
struct Window {
  enum class Kind { Knn, Radius };
  Kind kind = Kind::Knn;
  int k = 16;
  double radius = 0.0;

  static Window knn(int k) { return {Kind::Knn, k, 0.0}; }
  static Window ball(double r) { return {Kind::Radius, 0, r}; }
  bool is_knn() const { return kind == Kind::Knn; }
};

struct Neighbor {
  Index index = 0;
  double distance = 0.0;
  bool operator==(const Neighbor&) const = default;
};

/// Support sets for a batch of output points in compressed-row form. Row i
/// holds the input indices of S(i) sorted by (distance, index), with the
/// offsets (output position - input position) in the same order.
struct NeighborIndex {
  Window window;
  std::vector<Index> row_splits{0};
  std::vector<Index> indices;
  std::vector<double> distances;
  Eigen::MatrixXd offsets;  // entries x D
  Index num_inputs = 0;

  Index num_outputs() const { return static_cast<Index>(row_splits.size()) - 1; }
  Index num_entries() const { return static_cast<Index>(indices.size()); }
  Index dim() const { return offsets.cols(); }
  Index row_begin(Index i) const { return row_splits[static_cast<std::size_t>(i)]; }
  Index row_end(Index i) const { return row_splits[static_cast<std::size_t>(i) + 1]; }
  Index row_size(Index i) const { return row_end(i) - row_begin(i); }

  /// Supports taken from explicit adjacency lists (graph neighbourhoods);
  /// offsets are still output minus input position and rows are sorted by
  /// index since distances carry no ordering meaning there.
  static NeighborIndex from_adjacency(const std::vector<std::vector<Index>>& adjacency,
                                      const Eigen::MatrixXd& output_positions,
                                      const Eigen::MatrixXd& input_positions);
};

/// Static KD-tree over the rows of a point matrix. Immutable after
/// construction, so concurrent queries are safe.
class KdTree {
 public:
  struct Node {
    int split_dim = -1;  // -1 marks a leaf
    double split_value = 0.0;
    Index begin = 0;
    Index end = 0;
    int left = -1;
    int right = -1;
    bool is_leaf() const { return split_dim < 0; }
  };

  explicit KdTree(const Eigen::MatrixXd& points, int leaf_size = 16);

  Index size() const { return num_points_; }
  Index dim() const { return dim_; }
  int leaf_size() const { return leaf_size_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  /// Point indices in leaf order; a permutation of 0..N-1.
  const std::vector<Index>& permutation() const { return perm_; }
  /// Bounding box of node n: lo = [0, D), hi = [D, 2D).
  std::span<const double> bounds(int n) const {
    return {bounds_.data() + static_cast<std::size_t>(n) * 2 * dim_, static_cast<std::size_t>(2 * dim_)};
  }
  std::span<const double> point(Index i) const {
    return {coords_.data() + static_cast<std::size_t>(i * dim_), static_cast<std::size_t>(dim_)};
  }

  std::vector<Neighbor> knn(std::span<const double> query, int k) const;
  std::vector<Neighbor> radius(std::span<const double> query, double r) const;

 private:
  int build(Index begin, Index end);
  double box_distance2(int node, std::span<const double> q) const;

  Index num_points_ = 0;
  Index dim_ = 0;
  int leaf_size_ = 16;
  std::vector<double> coords_;  // row-major copy of the input
  std::vector<Index> perm_;
  std::vector<Node> nodes_;
  std::vector<double> bounds_;
};

/// Squared Euclidean distance accumulated in coordinate order. Shared by the
/// tree and the brute-force scan so both see identical values.
inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t d = 0; d < a.size(); ++d) {
    const double diff = a[d] - b[d];
    s += diff * diff;
  }
  return s;
}

KdTree build_kdtree(const Eigen::MatrixXd& points, int leaf_size = 16);
std::vector<Neighbor> knn_query(const KdTree& tree, std::span<const double> query, int k);
std::vector<Neighbor> radius_query(const KdTree& tree, std::span<const double> query, double r);

// Full-scan oracles with the same contracts as the tree queries.
std::vector<Neighbor> brute_force_knn(const Eigen::MatrixXd& points, std::span<const double> query,
                                      int k);
std::vector<Neighbor> brute_force_radius(const Eigen::MatrixXd& points,
                                         std::span<const double> query, double r);

/// Runs the window query for every output row and assembles the compressed
/// support structure. Queries are split across `threads` workers; the result
/// does not depend on the worker count.
NeighborIndex build_neighbors(const KdTree& tree, const Eigen::MatrixXd& input_positions,
                              const Eigen::MatrixXd& output_positions, const Window& window,
                              int threads = 1);

/// Convenience overload that builds the tree itself.
NeighborIndex build_neighbors(const Eigen::MatrixXd& input_positions,
                              const Eigen::MatrixXd& output_positions, const Window& window,
                              int threads = 1);

}  // namespace contconv
