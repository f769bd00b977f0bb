#include <doctest.h>

#include <cmath>
#include <limits>

#include "mother/arborescence.hpp"
#include "mother/matrices.hpp"
#include "mother/simgen.hpp"
#include "oracles.hpp"

using namespace mother;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

NodeSet two_identical_models() {
  Rng rng(101);
  const auto t = oracle::random_tensor("w", {6, 6}, rng);
  NodeSet s;
  s.metric_config.direction_filter = LayerFilter();
  s.nodes.push_back({"a", Stage::specialization,
                     std::make_shared<ModelWeights>(oracle::model("a", {t}))});
  s.nodes.push_back({"b", Stage::specialization,
                     std::make_shared<ModelWeights>(oracle::model("b", {t}))});
  return s;
}

}  // namespace

TEST_CASE("distance matrix: identical pair and size guard") {
  NodeSet s = two_identical_models();
  const SquareMatrix d = build_distance_matrix(s);
  CHECK(d.at(0, 0) == kInf);
  CHECK(d.at(1, 1) == kInf);
  CHECK(d.at(0, 1) == 0.0);
  CHECK(d.at(1, 0) == 0.0);

  NodeSet one;
  one.nodes.push_back(s.nodes[0]);
  CHECK_THROWS_WITH_AS(build_distance_matrix(one), doctest::Contains(">= 2"),
                       Error);
}

TEST_CASE("distance matrix: simulated chain orders parent before grandparent") {
  SimConfig cfg = preset_config(Preset::gpc, 3);
  const Population pop = generate_graph(cfg);
  NodeSet s = make_node_set(pop, DistanceMetric::ft, MetricConfig{});
  const SquareMatrix d = build_distance_matrix(s);
  // Nodes are in manifest order: root, child, grandchild.
  CHECK(d.at(0, 1) < d.at(0, 2));
  CHECK(d.at(2, 1) < d.at(2, 0));
}

TEST_CASE("direction matrix from scores") {
  const BinaryMatrix k = build_direction_matrix({5.0, 3.0});
  CHECK(k.at(0, 1) == 0);
  CHECK(k.at(1, 0) == 1);

  SUBCASE("ties leave both directions unpenalized") {
    const BinaryMatrix t = build_direction_matrix({2.0, 2.0, 2.0});
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        CHECK(t.at(i, j) == 0);
      }
    }
  }

  SUBCASE("strictly decreasing chain fills the lower triangle") {
    const BinaryMatrix k3 = build_direction_matrix({9.0, 7.0, 5.0, 3.0});
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) {
        CHECK(k3.at(i, j) == (i > j ? 1 : 0));
      }
    }
  }
}

TEST_CASE("stage matrix marks generalization children columnwise") {
  NodeSet s = two_identical_models();
  SUBCASE("all specialization -> zero matrix") {
    const BinaryMatrix t = build_stage_matrix(s);
    CHECK(t.at(0, 1) == 0);
    CHECK(t.at(1, 0) == 0);
  }
  SUBCASE("all generalization -> ones off the diagonal") {
    for (auto& n : s.nodes) {
      n.stage = Stage::generalization;
    }
    const BinaryMatrix t = build_stage_matrix(s);
    CHECK(t.at(0, 1) == 1);
    CHECK(t.at(1, 0) == 1);
    CHECK(t.at(0, 0) == 0);
  }
  SUBCASE("mixed stages: column j set iff node j generalization") {
    s.nodes.push_back(s.nodes[0]);
    s.nodes[2].model_id = "c";
    s.nodes[1].stage = Stage::generalization;
    const BinaryMatrix t = build_stage_matrix(s);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) {
        CHECK(t.at(i, j) == ((i != j && j == 1) ? 1 : 0));
      }
    }
  }
}

TEST_CASE("combine: worked 2x2 example") {
  SquareMatrix d(2, kInf);
  d.at(0, 1) = 2.0;
  d.at(1, 0) = 2.0;
  BinaryMatrix k(2);
  k.at(1, 0) = 1;  // score(v2) < score(v1)
  const BinaryMatrix t(2);
  const auto [lambda, m] = combine(d, k, t, 0.3);
  CHECK(lambda == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(m.at(0, 1) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(m.at(1, 0) == doctest::Approx(2.6).epsilon(1e-12));
  CHECK(m.at(0, 0) == kInf);

  SUBCASE("c = 0 collapses M onto D") {
    const auto [l0, m0] = combine(d, k, t, 0.0);
    CHECK(l0 == 0.0);
    CHECK(m0.at(0, 1) == d.at(0, 1));
    CHECK(m0.at(1, 0) == d.at(1, 0));
  }

  SUBCASE("flipping every T entry moves the penalty across the pair") {
    BinaryMatrix flipped(2);
    flipped.at(0, 1) = 1;
    flipped.at(1, 0) = 1;
    const auto [l1, m1] = combine(d, k, flipped, 0.3);
    CHECK(l1 == doctest::Approx(0.6));
    CHECK(m1.at(0, 1) == doctest::Approx(2.6));
    CHECK(m1.at(1, 0) == doctest::Approx(2.0));
  }

  SUBCASE("all-infinite distances are rejected") {
    SquareMatrix inf_only(2, kInf);
    CHECK_THROWS_WITH_AS(combine(inf_only, k, t, 0.3),
                         doctest::Contains("infinite"), Error);
  }
}

TEST_CASE("scale equivariance: scaling all weights keeps the arborescence") {
  SimConfig cfg = preset_config(Preset::pc2, 11);
  const Population pop = generate_graph(cfg);

  auto recover_parents = [&](double scale) {
    Population scaled = pop;
    for (auto& m : scaled.models) {
      auto copy = std::make_shared<ModelWeights>(*m);
      for (auto& t : copy->tensors) {
        for (auto& x : t.data) {
          x = static_cast<float>(x * scale);
        }
      }
      m = std::move(copy);
    }
    NodeSet s = make_node_set(scaled, DistanceMetric::ft, MetricConfig{});
    const CostMatrices cm = build_cost_matrices(s, 0.3);
    return best_arborescence(cm.M, {std::nullopt, cm.scores, true}).parent;
  };

  CHECK(recover_parents(1.0) == recover_parents(3.0));
}

TEST_CASE("relabeling equivariance: permuting nodes permutes M") {
  SimConfig cfg = preset_config(Preset::gpc, 13);
  const Population pop = generate_graph(cfg);
  NodeSet s = make_node_set(pop, DistanceMetric::ft, MetricConfig{});
  const CostMatrices cm = build_cost_matrices(s, 0.3);

  NodeSet permuted = s;
  const std::vector<int> perm = {2, 0, 1};  // new index -> old index
  for (int i = 0; i < 3; ++i) {
    permuted.nodes[static_cast<size_t>(i)] =
        s.nodes[static_cast<size_t>(perm[static_cast<size_t>(i)])];
  }
  const CostMatrices pm = build_cost_matrices(permuted, 0.3);
  CHECK(pm.lambda == doctest::Approx(cm.lambda).epsilon(1e-12));
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      if (i == j) {
        continue;
      }
      CHECK(pm.M.at(i, j) ==
            doctest::Approx(cm.M.at(perm[static_cast<size_t>(i)],
                                    perm[static_cast<size_t>(j)]))
                .epsilon(1e-12));
    }
  }
}

TEST_CASE("c-robustness on small simulated trees") {
  int identical = 0;
  constexpr int kTrials = 10;
  for (int trial = 0; trial < kTrials; ++trial) {
    SimConfig cfg = preset_config(Preset::pc2, 100 + trial);
    const Population pop = generate_graph(cfg);
    NodeSet s = make_node_set(pop, DistanceMetric::ft, MetricConfig{});
    const SquareMatrix d = build_distance_matrix(s);
    const auto scores = directional_scores(s);
    const BinaryMatrix k = build_direction_matrix(scores);
    const BinaryMatrix t = build_stage_matrix(s);
    std::vector<std::vector<int>> parents;
    for (const double c : {0.1, 0.3, 1.0, 3.0}) {
      const auto [lambda, m] = combine(d, k, t, c);
      parents.push_back(best_arborescence(m, {std::nullopt, scores, true}).parent);
    }
    bool same = true;
    for (const auto& p : parents) {
      same = same && p == parents.front();
    }
    identical += same ? 1 : 0;
  }
  CHECK(identical >= static_cast<int>(0.95 * kTrials));
}

TEST_CASE("metric errors carry the pair identity") {
  NodeSet s = two_identical_models();
  (*std::const_pointer_cast<ModelWeights>(s.nodes[1].weights))
      .tensors[0]
      .name = "other";
  try {
    build_distance_matrix(s);
    FAIL("expected an error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("'a'") != std::string::npos);
    CHECK(msg.find("'b'") != std::string::npos);
  }
}
