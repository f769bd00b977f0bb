#include <doctest.h>

#include <cmath>
#include <set>

#include "mother/checkpoint.hpp"
#include "mother/metrics.hpp"
#include "mother/simgen.hpp"
#include "oracles.hpp"

using namespace mother;

TEST_CASE("roots are deterministic and well separated") {
  SimConfig cfg = preset_config(Preset::pc2, 5);

  SUBCASE("same seed, same bytes") {
    const ModelWeights a = generate_root(cfg, 0);
    const ModelWeights b = generate_root(cfg, 0);
    REQUIRE(a.tensors.size() == b.tensors.size());
    for (size_t i = 0; i < a.tensors.size(); ++i) {
      CHECK(a.tensors[i].data == b.tensors[i].data);
    }
  }

  SUBCASE("separation >= 10x the measured parent-child step") {
    cfg.inter_root_separation = 10.0;
    const ModelWeights r0 = generate_root(cfg, 0);
    const ModelWeights r1 = generate_root(cfg, 1);
    Rng rng(mix_seed(cfg.seed, "probe-child"));
    const ModelWeights child = specialize_child(r0, cfg, rng);
    MetricConfig mc;
    const double step = ft_distance(r0, child, mc);
    const double gap = ft_distance(r0, r1, mc);
    CHECK(gap >= 10.0 * step);
  }

  SUBCASE("dense-layer kurtosis of a fresh root is Gaussian") {
    // Wider layers keep the per-layer estimate within the stated 0.2.
    cfg.architecture = transformer_architecture(2, 96);
    cfg.lora_layers.clear();
    const ModelWeights root = generate_root(cfg, 0);
    MetricConfig mc;  // dense filter default
    for (const auto& t : root.tensors) {
      if (mc.direction_filter.matches(t.name)) {
        const double kurt = oracle::naive_kurtosis(t.data);
        CHECK(kurt == doctest::Approx(3.0).epsilon(0.2 / 3.0));
      }
    }
  }
}

TEST_CASE("specialize_child strictly lowers the score, generalize raises it") {
  SimConfig cfg = preset_config(Preset::gpc, 7);
  const auto dense = dense_layer_names(cfg);
  const ModelWeights root = generate_root(cfg, 0);

  SUBCASE("kurtosis decreases along 20 specialization draws") {
    for (int i = 0; i < 20; ++i) {
      Rng rng(mix_seed(cfg.seed, "spec/" + std::to_string(i)));
      const ModelWeights child = specialize_child(root, cfg, rng);
      CHECK(kurtosis_score(child, dense) < kurtosis_score(root, dense));
    }
  }

  SUBCASE("kurtosis increases along 20 generalization draws") {
    for (int i = 0; i < 20; ++i) {
      Rng rng(mix_seed(cfg.seed, "gen/" + std::to_string(i)));
      const ModelWeights child = generalize_child(root, cfg, rng);
      CHECK(kurtosis_score(child, dense) > kurtosis_score(root, dense));
    }
  }

  SUBCASE("distances grow along chains") {
    int ok = 0;
    constexpr int kChains = 20;
    MetricConfig mc;
    for (int i = 0; i < kChains; ++i) {
      Rng r1(mix_seed(cfg.seed, "c1/" + std::to_string(i)));
      Rng r2(mix_seed(cfg.seed, "c2/" + std::to_string(i)));
      const ModelWeights child = specialize_child(root, cfg, r1);
      const ModelWeights grandchild = specialize_child(child, cfg, r2);
      const double d1 = ft_distance(root, child, mc);
      const double d2 = ft_distance(root, grandchild, mc);
      if (d1 > 0.0 && d1 < d2) {
        ++ok;
      }
    }
    CHECK(ok >= static_cast<int>(0.95 * kChains));
  }

  SUBCASE("a do-nothing step is rejected by the retry budget") {
    SimConfig frozen = cfg;
    frozen.tail_shrink = 0.0;
    frozen.ft_noise_scale = 0.0;
    Rng rng(1);
    CHECK_THROWS_WITH_AS(specialize_child(root, frozen, rng),
                         doctest::Contains("retry budget"), Error);
    SimConfig no_spikes = cfg;
    no_spikes.spike_prob = 1e-12;
    Rng rng2(2);
    CHECK_THROWS_WITH_AS(generalize_child(root, no_spikes, rng2),
                         doctest::Contains("retry budget"), Error);
  }
}

TEST_CASE("lora_child: exact ranks, untouched layers, additivity") {
  SimConfig cfg = preset_config(Preset::lora_v, 9);
  cfg.architecture = transformer_architecture(2, 48);
  cfg.lora_layers.clear();
  for (const auto& spec : cfg.architecture) {
    if (spec.name.find("attn.query.weight") != std::string::npos ||
        spec.name.find("attn.value.weight") != std::string::npos) {
      cfg.lora_layers.push_back(spec.name);
    }
  }
  const ModelWeights root = generate_root(cfg, 0);
  MetricConfig mc;
  mc.distance_filter = LayerFilter(default_lora_pattern());

  SUBCASE("lora_distance(parent, child) equals the requested rank") {
    for (const int rank : {1, 4, 16}) {
      Rng rng(mix_seed(cfg.seed, "lora/" + std::to_string(rank)));
      const ModelWeights child = lora_child(root, cfg, rank, rng);
      CHECK(lora_distance(root, child, mc) == rank);
      // The independent SVD oracle sees the same rank on each delta
      // (tolerance above the f32 rounding floor, far below the real spectrum).
      for (const auto& name : cfg.lora_layers) {
        TensorRecord diff = *child.find(name);
        const TensorRecord* orig = root.find(name);
        for (size_t i = 0; i < diff.data.size(); ++i) {
          diff.data[i] -= orig->data[i];
        }
        CHECK(oracle::oracle_rank(diff, 1e-4) == rank);
      }
    }
  }

  SUBCASE("non-LoRA layers stay bitwise identical") {
    Rng rng(11);
    const ModelWeights child = lora_child(root, cfg, 8, rng);
    for (const auto& t : root.tensors) {
      if (std::find(cfg.lora_layers.begin(), cfg.lora_layers.end(), t.name) !=
          cfg.lora_layers.end()) {
        continue;
      }
      CHECK(child.find(t.name)->data == t.data);
    }
  }

  SUBCASE("sibling deltas add: ranks 2 and 3 give mutual distance 5") {
    Rng r1(mix_seed(cfg.seed, "sib/1"));
    Rng r2(mix_seed(cfg.seed, "sib/2"));
    const ModelWeights s1 = lora_child(root, cfg, 2, r1);
    const ModelWeights s2 = lora_child(root, cfg, 3, r2);
    CHECK(lora_distance(s1, s2, mc) == 5);
  }

  SUBCASE("oversized rank is rejected") {
    Rng rng(13);
    CHECK_THROWS_WITH_AS(lora_child(root, cfg, 64, rng),
                         doctest::Contains("rank too large"), Error);
  }

  SUBCASE("score strictly decreases across lora children") {
    for (int i = 0; i < 10; ++i) {
      Rng rng(mix_seed(cfg.seed, "lscore/" + std::to_string(i)));
      const ModelWeights child = lora_child(root, cfg, 8, rng);
      CHECK(kurtosis_score(child, cfg.lora_layers) <
            kurtosis_score(root, cfg.lora_layers));
    }
  }
}

TEST_CASE("generate_graph: preset shapes and determinism") {
  SUBCASE("ft preset: 5 trees x 21 nodes") {
    SimConfig cfg = preset_config(Preset::ft, 1);
    cfg.architecture = transformer_architecture(1, 16);  // tiny for the test
    cfg.lora_layers.clear();
    const Population pop = generate_graph(cfg);
    CHECK(pop.models.size() == 105);
    CHECK(pop.manifest.nodes.size() == 105);
    const auto labels = pop.manifest.tree_labels();
    CHECK(*std::max_element(labels.begin(), labels.end()) == 4);
    CHECK_NOTHROW(validate_manifest(pop.manifest));
  }

  SUBCASE("deep preset: 121 nodes, leaves 4 edges from the root") {
    SimConfig cfg = preset_config(Preset::deep, 1);
    cfg.architecture = transformer_architecture(1, 16);
    cfg.lora_layers.clear();
    const Population pop = generate_graph(cfg);
    CHECK(pop.models.size() == 121);
    int max_depth = 0;
    for (size_t i = 0; i < pop.manifest.nodes.size(); ++i) {
      max_depth = std::max(max_depth,
                           pop.manifest.edge_distance(0, static_cast<int>(i)));
    }
    CHECK(max_depth == 4);
  }

  SUBCASE("same config, same bytes") {
    SimConfig cfg = preset_config(Preset::pcs, 33);
    const Population a = generate_graph(cfg);
    const Population b = generate_graph(cfg);
    REQUIRE(a.models.size() == b.models.size());
    for (size_t i = 0; i < a.models.size(); ++i) {
      REQUIRE(a.models[i]->tensors.size() == b.models[i]->tensors.size());
      for (size_t t = 0; t < a.models[i]->tensors.size(); ++t) {
        CHECK(a.models[i]->tensors[t].data == b.models[i]->tensors[t].data);
      }
    }
  }

  SUBCASE("sibling distances exceed parent distances (seed robustness)") {
    SimConfig cfg = preset_config(Preset::pc2, 35);
    cfg.branching = 3;
    const Population pop = generate_graph(cfg);
    MetricConfig mc;
    NodeSet s = make_node_set(pop, DistanceMetric::ft, mc);
    // Nodes: root, then three siblings.
    for (int i = 1; i <= 3; ++i) {
      for (int j = i + 1; j <= 3; ++j) {
        const double sibling = ft_distance(*s.nodes[static_cast<size_t>(i)].weights,
                                           *s.nodes[static_cast<size_t>(j)].weights,
                                           mc);
        const double pi = ft_distance(*s.nodes[0].weights,
                                      *s.nodes[static_cast<size_t>(i)].weights,
                                      mc);
        const double pj = ft_distance(*s.nodes[0].weights,
                                      *s.nodes[static_cast<size_t>(j)].weights,
                                      mc);
        CHECK(sibling > pi);
        CHECK(sibling > pj);
      }
    }
  }

  SUBCASE("Fig. 1 property: distance correlates with edge distance") {
    SimConfig cfg = preset_config(Preset::gpc, 37);
    cfg.levels = 4;
    cfg.branching = 2;
    const Population pop = generate_graph(cfg);
    MetricConfig mc;
    NodeSet s = make_node_set(pop, DistanceMetric::ft, mc);
    std::vector<double> dist, hops;
    for (int i = 0; i < s.size(); ++i) {
      for (int j = i + 1; j < s.size(); ++j) {
        dist.push_back(ft_distance(*s.nodes[static_cast<size_t>(i)].weights,
                                   *s.nodes[static_cast<size_t>(j)].weights,
                                   mc));
        hops.push_back(pop.manifest.edge_distance(i, j));
      }
    }
    CHECK(pearson_correlation(dist, hops) >= 0.9);
  }

  SUBCASE("config invariants rejected") {
    SimConfig cfg = preset_config(Preset::ft, 0);
    cfg.branching = 0;
    CHECK_THROWS_AS(generate_graph(cfg), Error);
    cfg = preset_config(Preset::lora_v, 0);
    cfg.lora_ranks = {0};
    CHECK_THROWS_AS(generate_graph(cfg), Error);
  }
}

TEST_CASE("prune_model applies the exact smallest-magnitude rule") {
  const ModelWeights m = oracle::model(
      "m", {oracle::tensor("w", {4}, {1.0f, -2.0f, 3.0f, -4.0f})});

  SUBCASE("fraction 0 is the identity") {
    const ModelWeights p = prune_model(m, 0.0);
    CHECK(p.tensors[0].data == m.tensors[0].data);
  }

  SUBCASE("fraction 0.5 zeroes the two smallest magnitudes") {
    const ModelWeights p = prune_model(m, 0.5);
    CHECK(p.tensors[0].data == std::vector<float>{0.0f, 0.0f, 3.0f, -4.0f});
  }

  SUBCASE("zero count matches floor(fraction * n) per tensor") {
    Rng rng(39);
    const ModelWeights big =
        oracle::model("big", {oracle::random_tensor("w", {31, 7}, rng)});
    for (const double frac : {0.25, 0.5, 0.9}) {
      const ModelWeights p = prune_model(big, frac);
      int64_t zeros = 0;
      for (const float v : p.tensors[0].data) {
        zeros += v == 0.0f ? 1 : 0;
      }
      CHECK(zeros >= static_cast<int64_t>(
                         std::floor(frac * static_cast<double>(31 * 7))));
    }
  }

  SUBCASE("magnitude ties break toward the lower index") {
    const ModelWeights tied = oracle::model(
        "t", {oracle::tensor("w", {4}, {1.0f, -1.0f, 1.0f, 2.0f})});
    const ModelWeights p = prune_model(tied, 0.5);
    CHECK(p.tensors[0].data == std::vector<float>{0.0f, 0.0f, 1.0f, 2.0f});
  }
}

TEST_CASE("quantize_model: f16 and int8 behavior") {
  SUBCASE("values exactly representable in half pass through") {
    const ModelWeights m = oracle::model(
        "m", {oracle::tensor("w", {4}, {1.0f, -0.5f, 0.25f, 2.0f})});
    const ModelWeights q = quantize_model(m, QuantMode::f16);
    CHECK(q.tensors[0].data == m.tensors[0].data);
  }

  SUBCASE("f16 is idempotent") {
    Rng rng(43);
    const ModelWeights m =
        oracle::model("m", {oracle::random_tensor("w", {128}, rng)});
    const ModelWeights q1 = quantize_model(m, QuantMode::f16);
    const ModelWeights q2 = quantize_model(q1, QuantMode::f16);
    CHECK(q1.tensors[0].data == q2.tensors[0].data);
  }

  SUBCASE("int8 of a constant tensor lands within the quantization bound") {
    const float c = 0.7131f;
    const ModelWeights m =
        oracle::model("m", {oracle::tensor("w", {8}, std::vector<float>(8, c))});
    const ModelWeights q = quantize_model(m, QuantMode::int8);
    for (const float v : q.tensors[0].data) {
      CHECK(std::abs(v - c) <= std::abs(c) / 127.0 + 1e-7);
    }
  }
}

TEST_CASE("merge_models: uniform average") {
  const ModelWeights u = oracle::model("u", {oracle::tensor("w", {1}, {0.0f})});
  const ModelWeights v = oracle::model("v", {oracle::tensor("w", {1}, {2.0f})});
  CHECK(merge_models(u, v).tensors[0].data == std::vector<float>{1.0f});

  SUBCASE("merge(u, u) == u bitwise") {
    Rng rng(47);
    const ModelWeights m =
        oracle::model("m", {oracle::random_tensor("w", {64}, rng)});
    CHECK(merge_models(m, m).tensors[0].data == m.tensors[0].data);
  }

  SUBCASE("shape mismatch rejected") {
    const ModelWeights w = oracle::model("w", {oracle::tensor("w", {2}, {1, 2})});
    CHECK_THROWS_WITH_AS(merge_models(u, w), doctest::Contains("mismatch"),
                         Error);
  }

  SUBCASE("merged model is closer to its parents than to strangers") {
    SimConfig cfg = preset_config(Preset::s3, 49);
    const Population pop = generate_graph(cfg);
    const ModelWeights merged =
        merge_models(*pop.models[0], *pop.models[1]);
    CHECK(cosine_similarity(merged, *pop.models[0]) >
          cosine_similarity(merged, *pop.models[2]));
    CHECK(cosine_similarity(merged, *pop.models[1]) >
          cosine_similarity(merged, *pop.models[2]));
  }
}

TEST_CASE("population round trip through the checkpoint store") {
  SimConfig cfg = preset_config(Preset::pcs, 51);
  const Population pop = generate_graph(cfg);
  const auto dir = std::filesystem::temp_directory_path() / "mother_pop_rt";
  std::filesystem::create_directories(dir);
  for (size_t i = 0; i < pop.models.size(); ++i) {
    const auto path =
        dir / (pop.manifest.nodes[i].model_id + ".safetensors");
    save_model(*pop.models[i], path);
    const ModelWeights back = load_model(path);
    CHECK(back.model_id == pop.models[i]->model_id);
    for (const auto& t : pop.models[i]->tensors) {
      const TensorRecord* other = back.find(t.name);
      REQUIRE(other != nullptr);
      CHECK(other->data == t.data);
    }
  }
  std::filesystem::remove_all(dir);
}
