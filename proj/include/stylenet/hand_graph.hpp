#pragma once
// Hand skeleton graph, three-subset neighborhood partition and per-subset
// adjacency normalization.

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <cstddef>
#include <queue>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace stylenet {

using Matrix = Eigen::MatrixXd;

inline constexpr std::size_t kJointsPerHand = 21;
inline constexpr std::size_t kBonesPerHand = 20;
inline constexpr std::size_t kNumSubsets = 3;

enum class Hands { one, two };

/// A bone, oriented from the endpoint closer to the wrist to the farther one.
struct Edge {
  std::size_t parent = 0;
  std::size_t child = 0;
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Joint order per hand: wrist, then thumb, index, middle, ring, little,
/// each finger listed base to tip.
struct HandGraph {
  std::size_t num_vertices = 0;
  std::vector<Edge> edges;
  std::size_t root = 0;
  std::vector<std::size_t> roots;  // one wrist per hand
  std::vector<int> hop_distance;

  std::size_t num_hands() const { return roots.size(); }

  /// Symmetric 0/1 adjacency of the bones (no self loops).
  Matrix adjacency() const {
    Matrix a = Matrix::Zero(num_vertices, num_vertices);
    for (const auto& e : edges) {
      a(e.parent, e.child) = 1.0;
      a(e.child, e.parent) = 1.0;
    }
    return a;
  }

  std::size_t degree(std::size_t v) const {
    std::size_t d = 0;
    for (const auto& e : edges) d += (e.parent == v) + (e.child == v);
    return d;
  }
};

namespace detail {

inline std::vector<int> hop_distances(std::size_t n, const std::vector<Edge>& edges,
                                      const std::vector<std::size_t>& roots) {
  std::vector<std::vector<std::size_t>> nbr(n);
  for (const auto& e : edges) {
    nbr[e.parent].push_back(e.child);
    nbr[e.child].push_back(e.parent);
  }
  std::vector<int> dist(n, -1);
  std::queue<std::size_t> q;
  for (auto r : roots) {
    dist[r] = 0;
    q.push(r);
  }
  while (!q.empty()) {
    auto v = q.front();
    q.pop();
    for (auto w : nbr[v]) {
      if (dist[w] < 0) {
        dist[w] = dist[v] + 1;
        q.push(w);
      }
    }
  }
  return dist;
}

}  // namespace detail

inline HandGraph build_hand_graph(Hands hands) {
  HandGraph g;
  const std::size_t count = hands == Hands::one ? 1 : 2;
  g.num_vertices = kJointsPerHand * count;
  for (std::size_t h = 0; h < count; ++h) {
    const std::size_t off = h * kJointsPerHand;
    g.roots.push_back(off);
    for (std::size_t finger = 0; finger < 5; ++finger) {
      const std::size_t base = off + 1 + 4 * finger;
      g.edges.push_back({off, base});
      for (std::size_t j = 0; j < 3; ++j) g.edges.push_back({base + j, base + j + 1});
    }
  }
  g.root = g.roots.front();
  g.hop_distance = detail::hop_distances(g.num_vertices, g.edges, g.roots);
  return g;
}

/// Builds a graph from arbitrary edges; used for toy graphs in tests and
/// property checks. Edges are re-oriented parent -> child by hop distance.
inline HandGraph make_graph(std::size_t n, const std::vector<std::pair<std::size_t, std::size_t>>& pairs,
                            std::vector<std::size_t> roots = {0}) {
  HandGraph g;
  g.num_vertices = n;
  g.roots = std::move(roots);
  g.root = g.roots.empty() ? 0 : g.roots.front();
  std::vector<Edge> raw;
  for (auto [a, b] : pairs) {
    if (a >= n || b >= n) throw std::invalid_argument("make_graph: vertex index out of range");
    if (a == b) throw std::invalid_argument("make_graph: self loop");
    for (const auto& e : raw) {
      if ((e.parent == a && e.child == b) || (e.parent == b && e.child == a))
        throw std::invalid_argument("make_graph: duplicate edge");
    }
    raw.push_back({a, b});
  }
  g.hop_distance = detail::hop_distances(n, raw, g.roots);
  for (auto& e : raw) {
    if (g.hop_distance[e.child] >= 0 && g.hop_distance[e.parent] > g.hop_distance[e.child])
      std::swap(e.parent, e.child);
  }
  g.edges = std::move(raw);
  return g;
}

/// Raw subset matrices: [0] self connections, [1] neighbors closer to the
/// wrist (centripetal), [2] neighbors farther from the wrist (centrifugal).
inline std::array<Matrix, kNumSubsets> partition_subsets(const HandGraph& g) {
  const auto n = static_cast<Eigen::Index>(g.num_vertices);
  std::array<Matrix, kNumSubsets> s{Matrix::Identity(n, n), Matrix::Zero(n, n), Matrix::Zero(n, n)};
  for (const auto& e : g.edges) {
    for (auto [i, j] : {std::pair{e.parent, e.child}, std::pair{e.child, e.parent}}) {
      const int hi = g.hop_distance[i];
      const int hj = g.hop_distance[j];
      if (hj < hi) s[1](i, j) = 1.0;
      else if (hj > hi) s[2](i, j) = 1.0;
    }
  }
  return s;
}

/// Lambda^{-1/2} * raw * Lambda^{-1/2} with Lambda_ii = sum_j raw_ij + sigma.
/// sigma = 0 is accepted; a row with zero degree then stays a zero row.
inline Matrix normalize_subset(const Matrix& raw, double sigma) {
  if (raw.rows() != raw.cols()) throw std::invalid_argument("normalize_subset: matrix must be square");
  if (!(sigma >= 0.0) || !std::isfinite(sigma)) throw std::invalid_argument("normalize_subset: sigma must be >= 0");
  if ((raw.array() < 0.0).any() || !raw.allFinite())
    throw std::invalid_argument("normalize_subset: entries must be finite and nonnegative");
  const auto n = raw.rows();
  Eigen::VectorXd inv_sqrt(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = raw.row(i).sum() + sigma;
    inv_sqrt(i) = d > 0.0 ? 1.0 / std::sqrt(d) : 0.0;
  }
  return inv_sqrt.asDiagonal() * raw * inv_sqrt.asDiagonal();
}

inline std::array<Matrix, kNumSubsets> normalized_subsets(const HandGraph& g, double sigma = 0.001) {
  auto raw = partition_subsets(g);
  for (auto& m : raw) m = normalize_subset(m, sigma);
  return raw;
}

}  // namespace stylenet
