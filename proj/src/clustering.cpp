#include "mother/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace mother {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct MstEdge {
  int u = 0;
  int v = 0;
  double w = 0.0;
};

/// Prim's algorithm over the complete graph given by `dist`.
/// Deterministic: ties resolve toward the lowest node index.
std::vector<MstEdge> minimum_spanning_tree(const SquareMatrix& dist) {
  const int n = dist.size();
  std::vector<char> in_tree(static_cast<size_t>(n), 0);
  std::vector<double> best(static_cast<size_t>(n), kInf);
  std::vector<int> link(static_cast<size_t>(n), -1);
  std::vector<MstEdge> edges;
  edges.reserve(static_cast<size_t>(n) - 1);

  in_tree[0] = 1;
  for (int v = 1; v < n; ++v) {
    best[static_cast<size_t>(v)] = dist.at(0, v);
    link[static_cast<size_t>(v)] = 0;
  }
  for (int step = 1; step < n; ++step) {
    int pick = -1;
    for (int v = 0; v < n; ++v) {
      if (!in_tree[static_cast<size_t>(v)] &&
          (pick < 0 || best[static_cast<size_t>(v)] <
                           best[static_cast<size_t>(pick)])) {
        pick = v;
      }
    }
    if (pick < 0 || !std::isfinite(best[static_cast<size_t>(pick)])) {
      throw Error("clustering: distance matrix is not connected");
    }
    in_tree[static_cast<size_t>(pick)] = 1;
    edges.push_back({link[static_cast<size_t>(pick)], pick,
                     best[static_cast<size_t>(pick)]});
    for (int v = 0; v < n; ++v) {
      if (!in_tree[static_cast<size_t>(v)] &&
          dist.at(pick, v) < best[static_cast<size_t>(v)]) {
        best[static_cast<size_t>(v)] = dist.at(pick, v);
        link[static_cast<size_t>(v)] = pick;
      }
    }
  }
  return edges;
}

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(static_cast<size_t>(n)) {
    std::iota(parent.begin(), parent.end(), 0);
  }
  int find(int x) {
    while (parent[static_cast<size_t>(x)] != x) {
      parent[static_cast<size_t>(x)] =
          parent[static_cast<size_t>(parent[static_cast<size_t>(x)])];
      x = parent[static_cast<size_t>(x)];
    }
    return x;
  }
  void unite(int a, int b) { parent[static_cast<size_t>(find(a))] = find(b); }
};

ClusterAssignment labels_from_components(UnionFind& uf, int n) {
  ClusterAssignment out;
  out.labels.assign(static_cast<size_t>(n), -1);
  std::unordered_map<int, int> remap;
  int next = 0;
  for (int v = 0; v < n; ++v) {
    const int root = uf.find(v);
    auto it = remap.find(root);
    if (it == remap.end()) {
      it = remap.emplace(root, next++).first;
    }
    out.labels[static_cast<size_t>(v)] = it->second;
  }
  out.k = next;
  return out;
}

double single_layer_distance(const ModelWeights& u, const ModelWeights& v,
                             const std::string& layer_name) {
  const TensorRecord* a = u.find(layer_name);
  const TensorRecord* b = v.find(layer_name);
  if (a == nullptr || b == nullptr) {
    throw Error("no common layers: layer '" + layer_name +
                "' missing from '" + (a ? v.model_id : u.model_id) + "'");
  }
  return layer_l2(*a, *b);
}

}  // namespace

SquareMatrix clustering_distances(const NodeSet& s, const ClusterOptions& opts) {
  const int n = s.size();
  if (n == 1) {
    return SquareMatrix(1, kInf);
  }
  if (opts.mode == ClusterMode::ft) {
    NodeSet ft = s;
    ft.metric = DistanceMetric::ft;
    return build_distance_matrix(ft, opts.threads);
  }
  SquareMatrix d(n, kInf);
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      pairs.emplace_back(i, j);
    }
  }
  parallel_for(static_cast<int64_t>(pairs.size()), opts.threads, [&](int64_t p) {
    const auto [i, j] = pairs[static_cast<size_t>(p)];
    const auto& u = *s.nodes[static_cast<size_t>(i)].weights;
    const auto& v = *s.nodes[static_cast<size_t>(j)].weights;
    const double w = opts.mode == ClusterMode::concat
                         ? concat_l2_distance(u, v)
                         : single_layer_distance(u, v, opts.layer_name);
    d.at(i, j) = w;
    d.at(j, i) = w;
  });
  return d;
}

ClusterAssignment cluster_from_distances(const SquareMatrix& dist, int k) {
  const int n = dist.size();
  if (k < 1) {
    throw Error("cluster count must be >= 1");
  }
  if (k > n) {
    throw Error("cluster count " + std::to_string(k) + " exceeds node count " +
                std::to_string(n));
  }
  auto edges = minimum_spanning_tree(dist);
  // Single linkage cut at k clusters == drop the k-1 heaviest MST edges.
  std::vector<int> order(edges.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& ea = edges[static_cast<size_t>(a)];
    const auto& eb = edges[static_cast<size_t>(b)];
    if (ea.w != eb.w) {
      return ea.w > eb.w;
    }
    if (ea.u != eb.u) {
      return ea.u < eb.u;
    }
    return ea.v < eb.v;
  });
  UnionFind uf(n);
  for (size_t r = static_cast<size_t>(k) - 1; r < order.size(); ++r) {
    const auto& e = edges[static_cast<size_t>(order[r])];
    uf.unite(e.u, e.v);
  }
  return labels_from_components(uf, n);
}

ClusterAssignment cluster_models(const NodeSet& s, int k,
                                 const ClusterOptions& opts) {
  if (s.size() == 0) {
    throw Error("cluster_models: empty node set");
  }
  if (s.size() == 1) {
    if (k != 1) {
      throw Error("cluster count exceeds node count");
    }
    return {{0}, 1};
  }
  return cluster_from_distances(clustering_distances(s, opts), k);
}

int suggest_cluster_count(const SquareMatrix& dist, int max_k) {
  const int n = dist.size();
  if (n <= 1) {
    return n;
  }
  auto edges = minimum_spanning_tree(dist);
  std::vector<double> w;
  w.reserve(edges.size());
  for (const auto& e : edges) {
    w.push_back(e.w);
  }
  std::sort(w.begin(), w.end());
  const int limit = max_k > 0 ? std::min(max_k, n) : n;
  // Largest relative gap between consecutive merge distances; everything
  // above the gap would be cut.
  int best_k = 1;
  double best_ratio = 0.0;
  for (size_t i = 0; i + 1 < w.size(); ++i) {
    const int k = static_cast<int>(w.size() - i);  // clusters if cut here
    if (k > limit) {
      continue;
    }
    const double lo = w[i];
    const double hi = w[i + 1];
    const double ratio = lo > 0 ? hi / lo
                                : (hi > 0 ? kInf : 1.0);
    if (ratio > best_ratio) {
      best_ratio = ratio;
      best_k = k;
    }
  }
  return best_k;
}

std::vector<int> match_clusters(
    const std::vector<std::vector<int64_t>>& counts) {
  const int rows = static_cast<int>(counts.size());
  const int cols = rows == 0 ? 0 : static_cast<int>(counts[0].size());
  const int n = std::max(rows, cols);
  if (n == 0) {
    return {};
  }
  // Hungarian algorithm (potentials formulation) on the square-padded
  // negated counts; maximizing agreement == minimizing negated counts.
  std::vector<std::vector<double>> cost(
      static_cast<size_t>(n) + 1,
      std::vector<double>(static_cast<size_t>(n) + 1, 0.0));
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      cost[static_cast<size_t>(i) + 1][static_cast<size_t>(j) + 1] =
          -static_cast<double>(counts[static_cast<size_t>(i)]
                                     [static_cast<size_t>(j)]);
    }
  }
  std::vector<double> u(static_cast<size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<size_t>(n) + 1, 0.0);
  std::vector<int> match(static_cast<size_t>(n) + 1, 0);
  std::vector<int> way(static_cast<size_t>(n) + 1, 0);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n) + 1, kInf);
    std::vector<char> used(static_cast<size_t>(n) + 1, 0);
    do {
      used[static_cast<size_t>(j0)] = 1;
      const int i0 = match[static_cast<size_t>(j0)];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          continue;
        }
        const double cur = cost[static_cast<size_t>(i0)][static_cast<size_t>(j)] -
                           u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(match[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (match[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      match[static_cast<size_t>(j0)] = match[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(static_cast<size_t>(rows), -1);
  for (int j = 1; j <= n; ++j) {
    const int i = match[static_cast<size_t>(j)];
    if (i >= 1 && i <= rows && j <= cols) {
      row_to_col[static_cast<size_t>(i) - 1] = j - 1;
    }
  }
  return row_to_col;
}

double assignment_accuracy(const std::vector<int>& pred,
                           const std::vector<int>& truth) {
  if (pred.size() != truth.size() || pred.empty()) {
    throw Error("assignment_accuracy: label vectors must align");
  }
  const int kp = 1 + *std::max_element(pred.begin(), pred.end());
  const int kt = 1 + *std::max_element(truth.begin(), truth.end());
  std::vector<std::vector<int64_t>> counts(
      static_cast<size_t>(kp), std::vector<int64_t>(static_cast<size_t>(kt), 0));
  for (size_t i = 0; i < pred.size(); ++i) {
    ++counts[static_cast<size_t>(pred[i])][static_cast<size_t>(truth[i])];
  }
  const auto row_to_col = match_clusters(counts);
  int64_t agree = 0;
  for (int i = 0; i < kp; ++i) {
    const int j = row_to_col[static_cast<size_t>(i)];
    if (j >= 0) {
      agree += counts[static_cast<size_t>(i)][static_cast<size_t>(j)];
    }
  }
  return static_cast<double>(agree) / static_cast<double>(pred.size());
}

double clustering_accuracy(const ClusterAssignment& pred,
                           const GraphManifest& truth,
                           const std::vector<std::string>& node_ids) {
  if (pred.labels.size() != node_ids.size() ||
      node_ids.size() != truth.nodes.size()) {
    throw Error("node-set mismatch between prediction and manifest");
  }
  const auto tree_labels = truth.tree_labels();
  std::vector<int> true_labels(node_ids.size());
  for (size_t i = 0; i < node_ids.size(); ++i) {
    const int idx = truth.index_of(node_ids[i]);
    if (idx < 0) {
      throw Error("node-set mismatch: '" + node_ids[i] + "' not in manifest");
    }
    true_labels[i] = tree_labels[static_cast<size_t>(idx)];
  }
  return assignment_accuracy(pred.labels, true_labels);
}

}  // namespace mother
