#include "mother/matrices.hpp"

#include <cmath>
#include <limits>

namespace mother {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

std::string to_string(DistanceMetric m) {
  return m == DistanceMetric::ft ? "ft" : "lora";
}

DistanceMetric metric_from_string(const std::string& s) {
  if (s == "ft") {
    return DistanceMetric::ft;
  }
  if (s == "lora") {
    return DistanceMetric::lora;
  }
  throw Error("unknown metric '" + s + "' (expected ft|lora)");
}

SquareMatrix build_distance_matrix(const NodeSet& s, int threads) {
  const int n = s.size();
  if (n < 2) {
    throw Error("need >= 2 nodes to build a distance matrix");
  }
  SquareMatrix d(n, kInf);
  std::vector<std::pair<int, int>> pairs;
  pairs.reserve(static_cast<size_t>(n) * (n - 1) / 2);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      pairs.emplace_back(i, j);
    }
  }
  parallel_for(static_cast<int64_t>(pairs.size()), threads, [&](int64_t p) {
    const auto [i, j] = pairs[static_cast<size_t>(p)];
    const auto& u = *s.nodes[static_cast<size_t>(i)].weights;
    const auto& v = *s.nodes[static_cast<size_t>(j)].weights;
    double dist = 0.0;
    try {
      if (s.metric == DistanceMetric::ft) {
        dist = ft_distance(u, v, s.metric_config);
      } else {
        dist = static_cast<double>(lora_distance(u, v, s.metric_config));
      }
    } catch (const Error& e) {
      throw Error("pair ('" + s.nodes[static_cast<size_t>(i)].model_id +
                  "', '" + s.nodes[static_cast<size_t>(j)].model_id +
                  "'): " + e.what());
    }
    d.at(i, j) = dist;
    d.at(j, i) = dist;
  });
  return d;
}

std::vector<double> directional_scores(const NodeSet& s, int threads) {
  const int n = s.size();
  std::vector<double> scores(static_cast<size_t>(n), 0.0);
  parallel_for(n, threads, [&](int64_t i) {
    try {
      scores[static_cast<size_t>(i)] =
          directional_score(*s.nodes[static_cast<size_t>(i)].weights,
                            s.metric_config);
    } catch (const Error& e) {
      throw Error("node '" + s.nodes[static_cast<size_t>(i)].model_id +
                  "': " + e.what());
    }
  });
  return scores;
}

BinaryMatrix build_direction_matrix(const std::vector<double>& scores) {
  const int n = static_cast<int>(scores.size());
  BinaryMatrix k(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j && scores[static_cast<size_t>(i)] <
                        scores[static_cast<size_t>(j)]) {
        k.at(i, j) = 1;
      }
    }
  }
  return k;
}

BinaryMatrix build_direction_matrix(const NodeSet& s, int threads) {
  return build_direction_matrix(directional_scores(s, threads));
}

BinaryMatrix build_stage_matrix(const NodeSet& s) {
  const int n = s.size();
  BinaryMatrix t(n);
  for (int j = 0; j < n; ++j) {
    if (s.nodes[static_cast<size_t>(j)].stage == Stage::generalization) {
      for (int i = 0; i < n; ++i) {
        if (i != j) {
          t.at(i, j) = 1;
        }
      }
    }
  }
  return t;
}

std::pair<double, SquareMatrix> combine(const SquareMatrix& D,
                                        const BinaryMatrix& K,
                                        const BinaryMatrix& T, double c) {
  const int n = D.size();
  if (K.size() != n || T.size() != n) {
    throw Error("combine: inconsistent matrix sizes");
  }
  if (c < 0.0) {
    throw Error("combine: c must be non-negative");
  }
  KahanSum sum;
  int64_t count = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i != j && std::isfinite(D.at(i, j))) {
        sum.add(D.at(i, j));
        ++count;
      }
    }
  }
  if (count == 0) {
    throw Error("combine: every off-diagonal distance is infinite");
  }
  const double lambda = c * (sum.value() / static_cast<double>(count));
  SquareMatrix m(n, kInf);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      if (i == j) {
        continue;
      }
      const int flip = (K.at(i, j) ^ T.at(i, j)) ? 1 : 0;
      m.at(i, j) = D.at(i, j) + lambda * flip;
    }
  }
  return {lambda, m};
}

CostMatrices build_cost_matrices(const NodeSet& s, double c, int threads) {
  CostMatrices out;
  out.c = c;
  out.D = build_distance_matrix(s, threads);
  out.scores = directional_scores(s, threads);
  out.K = build_direction_matrix(out.scores);
  out.T = build_stage_matrix(s);
  auto [lambda, m] = combine(out.D, out.K, out.T, c);
  out.lambda = lambda;
  out.M = std::move(m);
  return out;
}

}  // namespace mother
