#include "contconv/spatial_index.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <thread>

namespace contconv {

namespace {

struct Candidate {
  double d2;
  Index index;
  bool operator<(const Candidate& o) const {
    return d2 < o.d2 || (d2 == o.d2 && index < o.index);
  }
};

std::vector<double> row_major(const Eigen::MatrixXd& points) {
  std::vector<double> out(static_cast<std::size_t>(points.size()));
  for (Index i = 0; i < points.rows(); ++i)
    for (Index d = 0; d < points.cols(); ++d)
      out[static_cast<std::size_t>(i * points.cols() + d)] = points(i, d);
  return out;
}

std::vector<Neighbor> to_neighbors(std::vector<Candidate> c) {
  std::sort(c.begin(), c.end());
  std::vector<Neighbor> out;
  out.reserve(c.size());
  for (const auto& e : c) out.push_back({e.index, std::sqrt(e.d2)});
  return out;
}

void check_query(std::span<const double> q, Index dim) {
  if (static_cast<Index>(q.size()) != dim)
    throw ShapeError("query dimension " + std::to_string(q.size()) + " != tree dimension " +
                     std::to_string(dim));
}

}  // namespace

KdTree::KdTree(const Eigen::MatrixXd& points, int leaf_size)
    : num_points_(points.rows()), dim_(points.cols()), leaf_size_(leaf_size) {
  if (num_points_ < 1) throw ShapeError("cannot build a kd-tree over an empty point set");
  if (dim_ < 1) throw ShapeError("kd-tree points need at least one coordinate");
  if (leaf_size_ < 1) throw ShapeError("kd-tree leaf size must be positive");
  require_finite(points, "kd-tree input points");
  coords_ = row_major(points);
  perm_.resize(static_cast<std::size_t>(num_points_));
  std::iota(perm_.begin(), perm_.end(), Index{0});
  nodes_.reserve(static_cast<std::size_t>(2 * (num_points_ / leaf_size_ + 1)));
  build(0, num_points_);
}

int KdTree::build(Index begin, Index end) {
  const int id = static_cast<int>(nodes_.size());
  nodes_.push_back({});
  bounds_.resize(bounds_.size() + static_cast<std::size_t>(2 * dim_));

  double* lo = bounds_.data() + static_cast<std::size_t>(id) * 2 * dim_;
  double* hi = lo + dim_;
  std::fill(lo, lo + dim_, std::numeric_limits<double>::infinity());
  std::fill(hi, hi + dim_, -std::numeric_limits<double>::infinity());
  for (Index p = begin; p < end; ++p) {
    auto pt = point(perm_[static_cast<std::size_t>(p)]);
    for (Index d = 0; d < dim_; ++d) {
      lo[d] = std::min(lo[d], pt[static_cast<std::size_t>(d)]);
      hi[d] = std::max(hi[d], pt[static_cast<std::size_t>(d)]);
    }
  }

  Node node;
  node.begin = begin;
  node.end = end;
  int widest = 0;
  double spread = -1.0;
  for (Index d = 0; d < dim_; ++d) {
    if (hi[d] - lo[d] > spread) {
      spread = hi[d] - lo[d];
      widest = static_cast<int>(d);
    }
  }
  // All points coincide: splitting cannot separate them.
  if (end - begin <= leaf_size_ || spread <= 0.0) {
    nodes_[static_cast<std::size_t>(id)] = node;
    return id;
  }

  const Index mid = begin + (end - begin) / 2;
  auto first = perm_.begin() + begin;
  std::nth_element(first, perm_.begin() + mid, perm_.begin() + end, [&](Index a, Index b) {
    const double ca = point(a)[static_cast<std::size_t>(widest)];
    const double cb = point(b)[static_cast<std::size_t>(widest)];
    return ca < cb || (ca == cb && a < b);
  });
  node.split_dim = widest;
  node.split_value = point(perm_[static_cast<std::size_t>(mid)])[static_cast<std::size_t>(widest)];
  const int left = build(begin, mid);
  const int right = build(mid, end);
  node.left = left;
  node.right = right;
  nodes_[static_cast<std::size_t>(id)] = node;
  return id;
}

double KdTree::box_distance2(int n, std::span<const double> q) const {
  auto b = bounds(n);
  double s = 0.0;
  for (Index d = 0; d < dim_; ++d) {
    const double x = q[static_cast<std::size_t>(d)];
    const double lo = b[static_cast<std::size_t>(d)];
    const double hi = b[static_cast<std::size_t>(dim_ + d)];
    const double diff = x < lo ? lo - x : (x > hi ? x - hi : 0.0);
    s += diff * diff;
  }
  return s;
}

std::vector<Neighbor> KdTree::knn(std::span<const double> query, int k) const {
  check_query(query, dim_);
  if (k < 1) throw ShapeError("knn query needs k >= 1");
  const auto want = static_cast<std::size_t>(std::min<Index>(k, num_points_));
  std::priority_queue<Candidate> heap;  // max-heap: top is the current worst

  // Explicit stack of nodes; the nearer child is visited first.
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int n = stack.back();
    stack.pop_back();
    // Equal bound distance could still admit a smaller index, so only strict
    // excess prunes.
    if (heap.size() == want && box_distance2(n, query) > heap.top().d2) continue;
    const Node& node = nodes_[static_cast<std::size_t>(n)];
    if (node.is_leaf()) {
      for (Index p = node.begin; p < node.end; ++p) {
        const Index idx = perm_[static_cast<std::size_t>(p)];
        const Candidate c{squared_distance(point(idx), query), idx};
        if (heap.size() < want) {
          heap.push(c);
        } else if (c < heap.top()) {
          heap.pop();
          heap.push(c);
        }
      }
      continue;
    }
    const bool go_left = query[static_cast<std::size_t>(node.split_dim)] < node.split_value;
    stack.push_back(go_left ? node.right : node.left);
    stack.push_back(go_left ? node.left : node.right);
  }

  std::vector<Candidate> found;
  found.reserve(heap.size());
  while (!heap.empty()) {
    found.push_back(heap.top());
    heap.pop();
  }
  return to_neighbors(std::move(found));
}

std::vector<Neighbor> KdTree::radius(std::span<const double> query, double r) const {
  check_query(query, dim_);
  if (!(r > 0.0)) throw ShapeError("radius query needs r > 0");
  const double r2 = r * r;
  std::vector<Candidate> found;
  std::vector<int> stack{0};
  while (!stack.empty()) {
    const int n = stack.back();
    stack.pop_back();
    if (box_distance2(n, query) > r2) continue;
    const Node& node = nodes_[static_cast<std::size_t>(n)];
    if (node.is_leaf()) {
      for (Index p = node.begin; p < node.end; ++p) {
        const Index idx = perm_[static_cast<std::size_t>(p)];
        const double d2 = squared_distance(point(idx), query);
        if (d2 <= r2 && std::sqrt(d2) < r) found.push_back({d2, idx});
      }
      continue;
    }
    stack.push_back(node.left);
    stack.push_back(node.right);
  }
  return to_neighbors(std::move(found));
}

KdTree build_kdtree(const Eigen::MatrixXd& points, int leaf_size) { return KdTree(points, leaf_size); }

std::vector<Neighbor> knn_query(const KdTree& tree, std::span<const double> query, int k) {
  return tree.knn(query, k);
}

std::vector<Neighbor> radius_query(const KdTree& tree, std::span<const double> query, double r) {
  return tree.radius(query, r);
}

std::vector<Neighbor> brute_force_knn(const Eigen::MatrixXd& points, std::span<const double> query,
                                      int k) {
  check_query(query, points.cols());
  if (k < 1) throw ShapeError("knn query needs k >= 1");
  const auto coords = row_major(points);
  const auto dim = static_cast<std::size_t>(points.cols());
  std::vector<Candidate> all;
  all.reserve(static_cast<std::size_t>(points.rows()));
  for (Index i = 0; i < points.rows(); ++i) {
    std::span<const double> p(coords.data() + static_cast<std::size_t>(i) * dim, dim);
    all.push_back({squared_distance(p, query), i});
  }
  std::sort(all.begin(), all.end());
  all.resize(std::min(all.size(), static_cast<std::size_t>(k)));
  return to_neighbors(std::move(all));
}

std::vector<Neighbor> brute_force_radius(const Eigen::MatrixXd& points,
                                         std::span<const double> query, double r) {
  check_query(query, points.cols());
  const auto coords = row_major(points);
  const auto dim = static_cast<std::size_t>(points.cols());
  std::vector<Candidate> all;
  for (Index i = 0; i < points.rows(); ++i) {
    std::span<const double> p(coords.data() + static_cast<std::size_t>(i) * dim, dim);
    const double d2 = squared_distance(p, query);
    if (std::sqrt(d2) < r) all.push_back({d2, i});
  }
  return to_neighbors(std::move(all));
}

NeighborIndex build_neighbors(const KdTree& tree, const Eigen::MatrixXd& input_positions,
                              const Eigen::MatrixXd& output_positions, const Window& window,
                              int threads) {
  require_shape(input_positions.rows() == tree.size() && input_positions.cols() == tree.dim(),
                "input positions do not match the kd-tree");
  require_shape(output_positions.cols() == tree.dim(), "output positions have wrong dimension");
  require_finite(output_positions, "output positions");
  if (window.is_knn() && window.k < 1) throw ShapeError("knn window needs K >= 1");
  if (!window.is_knn() && !(window.radius > 0.0)) throw ShapeError("radius window needs r > 0");

  const Index m = output_positions.rows();
  const Index dim = tree.dim();
  const auto queries = row_major(output_positions);
  std::vector<std::vector<Neighbor>> rows(static_cast<std::size_t>(m));

  auto work = [&](Index lo, Index hi) {
    for (Index i = lo; i < hi; ++i) {
      std::span<const double> q(queries.data() + static_cast<std::size_t>(i * dim),
                                static_cast<std::size_t>(dim));
      rows[static_cast<std::size_t>(i)] = window.is_knn() ? tree.knn(q, window.k)
                                                          : tree.radius(q, window.radius);
    }
  };
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(m)));
  if (workers == 1) {
    work(0, m);
  } else {
    std::vector<std::thread> pool;
    const Index chunk = (m + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      const Index lo = w * chunk;
      const Index hi = std::min(m, lo + chunk);
      if (lo < hi) pool.emplace_back(work, lo, hi);
    }
    for (auto& t : pool) t.join();
  }

  NeighborIndex out;
  out.window = window;
  out.num_inputs = tree.size();
  out.row_splits.assign(1, 0);
  out.row_splits.reserve(static_cast<std::size_t>(m + 1));
  for (const auto& r : rows) out.row_splits.push_back(out.row_splits.back() + static_cast<Index>(r.size()));
  const Index total = out.row_splits.back();
  out.indices.resize(static_cast<std::size_t>(total));
  out.distances.resize(static_cast<std::size_t>(total));
  out.offsets.resize(total, dim);
  Index t = 0;
  for (Index i = 0; i < m; ++i) {
    for (const auto& nb : rows[static_cast<std::size_t>(i)]) {
      out.indices[static_cast<std::size_t>(t)] = nb.index;
      out.distances[static_cast<std::size_t>(t)] = nb.distance;
      out.offsets.row(t) = output_positions.row(i) - input_positions.row(nb.index);
      ++t;
    }
  }
  return out;
}

NeighborIndex build_neighbors(const Eigen::MatrixXd& input_positions,
                              const Eigen::MatrixXd& output_positions, const Window& window,
                              int threads) {
  const KdTree tree(input_positions);
  return build_neighbors(tree, input_positions, output_positions, window, threads);
}

NeighborIndex NeighborIndex::from_adjacency(const std::vector<std::vector<Index>>& adjacency,
                                            const Eigen::MatrixXd& output_positions,
                                            const Eigen::MatrixXd& input_positions) {
  require_shape(static_cast<Index>(adjacency.size()) == output_positions.rows(),
                "adjacency list count must equal output point count");
  require_shape(output_positions.cols() == input_positions.cols(),
                "output and input positions must share a dimension");
  NeighborIndex out;
  out.window = Window::knn(1);
  out.num_inputs = input_positions.rows();
  Index total = 0;
  for (const auto& a : adjacency) total += static_cast<Index>(a.size());
  out.indices.reserve(static_cast<std::size_t>(total));
  out.distances.reserve(static_cast<std::size_t>(total));
  out.offsets.resize(total, input_positions.cols());
  Index t = 0;
  for (std::size_t i = 0; i < adjacency.size(); ++i) {
    auto sorted = adjacency[i];
    std::sort(sorted.begin(), sorted.end());
    for (Index j : sorted) {
      if (j < 0 || j >= input_positions.rows()) throw ShapeError("adjacency index out of range");
      out.indices.push_back(j);
      const Eigen::RowVectorXd off = output_positions.row(static_cast<Index>(i)) - input_positions.row(j);
      out.offsets.row(t++) = off;
      out.distances.push_back(off.norm());
    }
    out.row_splits.push_back(static_cast<Index>(out.indices.size()));
  }
  return out;
}

}  // namespace contconv
