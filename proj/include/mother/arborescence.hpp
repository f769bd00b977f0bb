#pragma once

#include <optional>
#include <vector>

#include "mother/matrices.hpp"

namespace mother {

/// A spanning tree of a directed graph, edges pointing away from the root.
/// parent[root] == -1; total_cost is the sum of M[parent[i]][i] over the
/// non-root nodes.
struct Arborescence {
  int root = 0;
  std::vector<int> parent;
  double total_cost = 0.0;
};

/// Minimum-cost spanning arborescence rooted at `root` via iterative cycle
/// contraction. Ties between incoming edges break toward the lowest source
/// index, so the result is deterministic. Throws when some node has no
/// finite path from the root.
Arborescence chu_liu_edmonds(const SquareMatrix& M, int root);

/// Root choice for best_arborescence. Without a hint, every feasible root is
/// tried and the cheapest wins; cost ties fall back to the extremal
/// directional score (max for specialization populations, min for
/// generalization) and then the lowest index.
struct RootPolicy {
  std::optional<int> hint;
  std::vector<double> scores;     // optional; empty skips the score tie-break
  bool prefer_max_score = true;   // specialization: true, generalization: false
};

Arborescence best_arborescence(const SquareMatrix& M,
                               const RootPolicy& policy = {}, int threads = 0);

/// Exhaustive enumeration of every spanning arborescence rooted at `root`
/// (finite edges only). Test oracle; guarded to n <= 8.
std::vector<std::pair<std::vector<int>, double>> enumerate_arborescences(
    const SquareMatrix& M, int root);

}  // namespace mother
