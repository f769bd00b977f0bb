#include "mother/arborescence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace mother {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct WorkEdge {
  int u = 0;        // current-level source
  int v = 0;        // current-level target
  double w = 0.0;   // reduced cost at this level
  int orig = 0;     // index into the level-0 edge list
};

struct OrigEdge {
  int u = 0;
  int v = 0;
  double w = 0.0;
};

/// Lexicographic preference for incoming edges: lower reduced cost, then
/// lower source index, then lower original edge index.
bool better_edge(const WorkEdge& a, const WorkEdge& b) {
  if (a.w != b.w) {
    return a.w < b.w;
  }
  if (a.u != b.u) {
    return a.u < b.u;
  }
  return a.orig < b.orig;
}

/// What one contraction needs to be undone later: which original edge each
/// cycle node had selected, and which original edges enter the cycle (keyed
/// by the cycle node they would displace).
struct Contraction {
  std::vector<std::pair<int, int>> cycle_edges;       // (cycle node, orig)
  std::unordered_map<int, int> entry_displaces;       // orig -> cycle node
};

/// Original-edge indices of a minimum arborescence. Iterative contraction:
/// only the current level's edge list is alive, plus one small Contraction
/// record per collapsed cycle.
std::vector<int> solve(int n, std::vector<WorkEdge> edges, int root) {
  std::vector<Contraction> history;

  std::vector<int> chosen;
  while (true) {
    // Cheapest incoming edge per node.
    std::vector<int> best(static_cast<size_t>(n), -1);
    for (size_t e = 0; e < edges.size(); ++e) {
      const WorkEdge& cand = edges[e];
      if (cand.v == root || cand.u == cand.v) {
        continue;
      }
      int& cur = best[static_cast<size_t>(cand.v)];
      if (cur < 0 || better_edge(cand, edges[static_cast<size_t>(cur)])) {
        cur = static_cast<int>(e);
      }
    }
    for (int v = 0; v < n; ++v) {
      if (v != root && best[static_cast<size_t>(v)] < 0) {
        throw Error("unreachable node: no finite incoming edge at "
                    "contraction level (node " +
                    std::to_string(v) + ")");
      }
    }

    // Look for a cycle among the selected edges.
    std::vector<int> color(static_cast<size_t>(n), 0);  // 0 new 1 stack 2 done
    std::vector<int> cycle;
    for (int start = 0; start < n && cycle.empty(); ++start) {
      if (color[static_cast<size_t>(start)] != 0) {
        continue;
      }
      std::vector<int> path;
      int cur = start;
      while (cur >= 0 && color[static_cast<size_t>(cur)] == 0) {
        color[static_cast<size_t>(cur)] = 1;
        path.push_back(cur);
        cur = cur == root ? -1
                          : edges[static_cast<size_t>(
                                      best[static_cast<size_t>(cur)])]
                                .u;
      }
      if (cur >= 0 && color[static_cast<size_t>(cur)] == 1) {
        const auto it = std::find(path.begin(), path.end(), cur);
        cycle.assign(it, path.end());
      }
      for (const int node : path) {
        color[static_cast<size_t>(node)] = 2;
      }
    }

    if (cycle.empty()) {
      chosen.reserve(static_cast<size_t>(n) - 1);
      for (int v = 0; v < n; ++v) {
        if (v != root) {
          chosen.push_back(edges[static_cast<size_t>(
                                     best[static_cast<size_t>(v)])]
                               .orig);
        }
      }
      break;
    }

    // Contract the cycle into one supernode; costs of entering edges drop by
    // the selected in-edge cost of the node they displace.
    std::vector<char> in_cycle(static_cast<size_t>(n), 0);
    for (const int v : cycle) {
      in_cycle[static_cast<size_t>(v)] = 1;
    }
    std::vector<int> label(static_cast<size_t>(n), -1);
    int next = 0;
    for (int v = 0; v < n; ++v) {
      if (!in_cycle[static_cast<size_t>(v)]) {
        label[static_cast<size_t>(v)] = next++;
      }
    }
    const int cyc_label = next++;
    for (const int v : cycle) {
      label[static_cast<size_t>(v)] = cyc_label;
    }

    Contraction ctx;
    for (const int v : cycle) {
      ctx.cycle_edges.emplace_back(
          v, edges[static_cast<size_t>(best[static_cast<size_t>(v)])].orig);
    }

    std::vector<WorkEdge> contracted;
    contracted.reserve(edges.size());
    for (const WorkEdge& e : edges) {
      const bool u_in = in_cycle[static_cast<size_t>(e.u)] != 0;
      const bool v_in = in_cycle[static_cast<size_t>(e.v)] != 0;
      if (u_in && v_in) {
        continue;
      }
      WorkEdge ne = e;
      ne.u = label[static_cast<size_t>(e.u)];
      ne.v = label[static_cast<size_t>(e.v)];
      if (v_in) {
        ne.w = e.w - edges[static_cast<size_t>(
                               best[static_cast<size_t>(e.v)])]
                         .w;
        ctx.entry_displaces.emplace(e.orig, e.v);
      }
      contracted.push_back(ne);
    }
    history.push_back(std::move(ctx));
    edges = std::move(contracted);  // previous level's list is released here
    n = next;
    root = label[static_cast<size_t>(root)];
  }

  // Undo the contractions innermost-first: locate the chosen edge entering
  // each collapsed cycle and keep every cycle edge except the displaced one.
  for (auto it = history.rbegin(); it != history.rend(); ++it) {
    int displaced = -1;
    for (const int orig : chosen) {
      const auto hit = it->entry_displaces.find(orig);
      if (hit != it->entry_displaces.end()) {
        displaced = hit->second;
        break;
      }
    }
    if (displaced < 0) {
      throw Error("internal: contracted cycle has no entering edge");
    }
    for (const auto& [node, orig] : it->cycle_edges) {
      if (node != displaced) {
        chosen.push_back(orig);
      }
    }
  }
  return chosen;
}

}  // namespace

Arborescence chu_liu_edmonds(const SquareMatrix& M, int root) {
  const int n = M.size();
  if (n < 1) {
    throw Error("chu_liu_edmonds: empty cost matrix");
  }
  if (root < 0 || root >= n) {
    throw Error("chu_liu_edmonds: root index out of range");
  }
  Arborescence a;
  a.root = root;
  a.parent.assign(static_cast<size_t>(n), -1);
  if (n == 1) {
    return a;
  }

  std::vector<OrigEdge> orig;
  std::vector<WorkEdge> edges;
  for (int u = 0; u < n; ++u) {
    for (int v = 0; v < n; ++v) {
      if (u == v || v == root || !std::isfinite(M.at(u, v))) {
        continue;
      }
      const int id = static_cast<int>(orig.size());
      orig.push_back({u, v, M.at(u, v)});
      edges.push_back({u, v, M.at(u, v), id});
    }
  }

  const std::vector<int> chosen = solve(n, edges, root);
  KahanSum cost;
  for (const int id : chosen) {
    const OrigEdge& e = orig[static_cast<size_t>(id)];
    a.parent[static_cast<size_t>(e.v)] = e.u;
  }
  // Recompute the total from M in index order for reproducible sums.
  for (int v = 0; v < n; ++v) {
    if (v != root) {
      if (a.parent[static_cast<size_t>(v)] < 0) {
        throw Error("internal: node without parent after CLE");
      }
      cost.add(M.at(a.parent[static_cast<size_t>(v)], v));
    }
  }
  a.total_cost = cost.value();
  return a;
}

Arborescence best_arborescence(const SquareMatrix& M, const RootPolicy& policy,
                               int threads) {
  const int n = M.size();
  if (n < 1) {
    throw Error("best_arborescence: empty cost matrix");
  }
  if (policy.hint) {
    return chu_liu_edmonds(M, *policy.hint);
  }
  std::vector<std::optional<Arborescence>> results(static_cast<size_t>(n));
  std::vector<std::string> errors(static_cast<size_t>(n));
  parallel_for(n, threads, [&](int64_t r) {
    try {
      results[static_cast<size_t>(r)] =
          chu_liu_edmonds(M, static_cast<int>(r));
    } catch (const Error& e) {
      errors[static_cast<size_t>(r)] = e.what();
    }
  });

  int best = -1;
  for (int r = 0; r < n; ++r) {
    if (!results[static_cast<size_t>(r)]) {
      continue;
    }
    if (best < 0) {
      best = r;
      continue;
    }
    const double cb = results[static_cast<size_t>(best)]->total_cost;
    const double cr = results[static_cast<size_t>(r)]->total_cost;
    if (cr < cb) {
      best = r;
    } else if (cr == cb && !policy.scores.empty()) {
      const double sb = policy.scores[static_cast<size_t>(best)];
      const double sr = policy.scores[static_cast<size_t>(r)];
      if (policy.prefer_max_score ? sr > sb : sr < sb) {
        best = r;
      }
    }
  }
  if (best < 0) {
    throw Error("no feasible root: " +
                (n > 0 ? errors[0] : std::string("empty")));
  }
  return *results[static_cast<size_t>(best)];
}

std::vector<std::pair<std::vector<int>, double>> enumerate_arborescences(
    const SquareMatrix& M, int root) {
  const int n = M.size();
  if (n > 8) {
    throw Error("oracle size guard: enumeration limited to n <= 8");
  }
  if (root < 0 || root >= n) {
    throw Error("enumerate_arborescences: root index out of range");
  }
  std::vector<std::pair<std::vector<int>, double>> out;
  std::vector<int> parent(static_cast<size_t>(n), -1);

  auto valid_tree = [&]() {
    for (int v = 0; v < n; ++v) {
      int cur = v;
      int hops = 0;
      while (cur != root) {
        cur = parent[static_cast<size_t>(cur)];
        if (cur < 0 || ++hops > n) {
          return false;
        }
      }
    }
    return true;
  };

  std::function<void(int)> assign = [&](int v) {
    if (v == n) {
      if (!valid_tree()) {
        return;
      }
      KahanSum cost;
      for (int i = 0; i < n; ++i) {
        if (i != root) {
          cost.add(M.at(parent[static_cast<size_t>(i)], i));
        }
      }
      out.emplace_back(parent, cost.value());
      return;
    }
    if (v == root) {
      assign(v + 1);
      return;
    }
    for (int p = 0; p < n; ++p) {
      if (p == v || !std::isfinite(M.at(p, v))) {
        continue;
      }
      parent[static_cast<size_t>(v)] = p;
      assign(v + 1);
      parent[static_cast<size_t>(v)] = -1;
    }
  };
  assign(0);
  return out;
}

}  // namespace mother
