#include "mother/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <Eigen/Dense>

namespace mother {

namespace {

double layer_sigma(const LayerSpec& spec) {
  if (spec.shape.size() < 2) {
    return 0.02;  // bias-like tensors
  }
  const double fan_in = static_cast<double>(spec.shape.back());
  return std::sqrt(2.0 / fan_in);
}

int64_t numel_of(const LayerSpec& spec) {
  int64_t n = 1;
  for (const int64_t d : spec.shape) {
    n *= d;
  }
  return n;
}

bool is_lora_layer(const SimConfig& cfg, const std::string& name) {
  return std::find(cfg.lora_layers.begin(), cfg.lora_layers.end(), name) !=
         cfg.lora_layers.end();
}

double layer_std(const TensorRecord& t) {
  const double mean = sum_values(t.data) / static_cast<double>(t.data.size());
  const float* p = t.data.data();
  const double m2 =
      blocked_reduce(static_cast<int64_t>(t.data.size()), [&](int64_t i) {
        const double d = static_cast<double>(p[i]) - mean;
        return d * d;
      }) /
      static_cast<double>(t.data.size());
  return std::sqrt(m2);
}

double frobenius_norm(const TensorRecord& t) {
  const float* p = t.data.data();
  return std::sqrt(blocked_reduce(static_cast<int64_t>(t.data.size()),
                                  [&](int64_t i) {
                                    const double v = p[i];
                                    return v * v;
                                  }));
}

/// 95th percentile of |values|.
float abs_percentile95(const TensorRecord& t) {
  std::vector<float> mag(t.data.size());
  for (size_t i = 0; i < t.data.size(); ++i) {
    mag[i] = std::abs(t.data[i]);
  }
  const size_t k = static_cast<size_t>(
      std::llround(0.95 * static_cast<double>(mag.size() - 1)));
  std::nth_element(mag.begin(), mag.begin() + static_cast<ptrdiff_t>(k),
                   mag.end());
  return mag[k];
}

// Each tail entry shrinks with probability 1/2, drawn per child. A
// deterministic shrink would be identical across siblings and cancel out of
// their pairwise differences, pulling siblings closer together than to their
// parent; the mask keeps the expected sibling gap above the parent gap.
void shrink_tails(TensorRecord& t, float threshold, double tail_shrink,
                  Rng& rng) {
  const float keep = static_cast<float>(1.0 - tail_shrink);
  for (float& x : t.data) {
    const float a = std::abs(x);
    if (a > threshold && rng.uniform() < 0.5) {
      const float shrunk = threshold + (a - threshold) * keep;
      x = x < 0 ? -shrunk : shrunk;
    }
  }
}

/// Expected per-layer l2 of one fine-tuning step under the config's child
/// policy; feeds the inter-root separation guarantee.
double expected_layer_step(const SimConfig& cfg, const LayerSpec& spec) {
  const double sigma = layer_sigma(spec);
  const double root_n = std::sqrt(static_cast<double>(numel_of(spec)));
  if (cfg.child_policy == ChildPolicy::lora) {
    if (!is_lora_layer(cfg, spec.name)) {
      return 0.0;
    }
    const double tau_mid = std::sqrt(cfg.lora_norm_lo * cfg.lora_norm_hi);
    return tau_mid * sigma * root_n;
  }
  return cfg.ft_noise_scale * sigma * root_n;
}

double expected_ft_step(const SimConfig& cfg) {
  KahanSum s;
  for (const auto& spec : cfg.architecture) {
    s.add(expected_layer_step(cfg, spec));
  }
  return s.value() / static_cast<double>(cfg.architecture.size());
}

/// Sample `count` distinct indices from [0, n) without replacement.
std::vector<int> sample_indices(Rng& rng, int n, int count) {
  std::vector<int> pool(static_cast<size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < count; ++i) {
    const int j = static_cast<int>(rng.uniform_int(i, n - 1));
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(count));
  return pool;
}

/// Orthonormalize the columns of a rows x r Gaussian draw (thin QR).
Eigen::MatrixXd random_orthonormal(Rng& rng, int64_t rows, int cols) {
  Eigen::MatrixXd g(rows, cols);
  for (int64_t i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      g(i, j) = rng.normal();
    }
  }
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  return q;
}

const std::vector<std::string>& score_names(const SimConfig& cfg,
                                            FinetuneKind kind,
                                            std::vector<std::string>& dense_buf) {
  if (kind == FinetuneKind::lora) {
    return cfg.lora_layers;
  }
  if (dense_buf.empty()) {
    dense_buf = dense_layer_names(cfg);
  }
  return dense_buf;
}

}  // namespace

std::vector<LayerSpec> transformer_architecture(int blocks, int dim) {
  std::vector<LayerSpec> arch;
  const int64_t d = dim;
  for (int b = 0; b < blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b) + ".";
    arch.push_back({prefix + "attn.query.weight", {d, d}, false});
    arch.push_back({prefix + "attn.key.weight", {d, d}, false});
    arch.push_back({prefix + "attn.value.weight", {d, d}, false});
    arch.push_back({prefix + "attn.output.weight", {d, d}, false});
    arch.push_back({prefix + "mlp.dense_in.weight", {2 * d, d}, true});
    arch.push_back({prefix + "mlp.dense_in.bias", {2 * d}, false});
    arch.push_back({prefix + "mlp.dense_out.weight", {d, 2 * d}, true});
    arch.push_back({prefix + "mlp.dense_out.bias", {d}, false});
  }
  return arch;
}

std::string to_string(Preset p) {
  switch (p) {
    case Preset::ft:
      return "ft";
    case Preset::lora_f:
      return "lora-f";
    case Preset::lora_v:
      return "lora-v";
    case Preset::mixed:
      return "mixed";
    case Preset::deep:
      return "deep";
    case Preset::merge:
      return "merge";
    case Preset::gpc:
      return "gpc";
    case Preset::pc2:
      return "pc2";
    case Preset::pcs:
      return "pcs";
    case Preset::s3:
      return "s3";
  }
  return "ft";
}

Preset preset_from_string(const std::string& s) {
  if (s == "ft") return Preset::ft;
  if (s == "lora-f") return Preset::lora_f;
  if (s == "lora-v") return Preset::lora_v;
  if (s == "mixed") return Preset::mixed;
  if (s == "deep") return Preset::deep;
  if (s == "merge") return Preset::merge;
  if (s == "gpc") return Preset::gpc;
  if (s == "pc2") return Preset::pc2;
  if (s == "pcs") return Preset::pcs;
  if (s == "s3") return Preset::s3;
  throw Error("unknown preset '" + s + "'");
}

std::vector<std::string> dense_layer_names(const SimConfig& cfg) {
  std::vector<std::string> names;
  for (const auto& spec : cfg.architecture) {
    if (spec.dense) {
      names.push_back(spec.name);
    }
  }
  return names;
}

namespace {

std::vector<std::string> lora_target_names(const std::vector<LayerSpec>& arch) {
  std::vector<std::string> names;
  for (const auto& spec : arch) {
    if (spec.name.find("attn.query.weight") != std::string::npos ||
        spec.name.find("attn.value.weight") != std::string::npos) {
      names.push_back(spec.name);
    }
  }
  return names;
}

}  // namespace

SimConfig preset_config(Preset p, uint64_t seed) {
  SimConfig cfg;
  cfg.seed = seed;
  switch (p) {
    case Preset::ft:
      cfg.architecture = transformer_architecture(14, 96);
      cfg.n_trees = 5;
      cfg.levels = 3;
      cfg.branching = 4;
      cfg.child_policy = ChildPolicy::full;
      break;
    case Preset::lora_f:
      cfg.architecture = transformer_architecture(4, 96);
      cfg.n_trees = 5;
      cfg.levels = 3;
      cfg.branching = 4;
      cfg.child_policy = ChildPolicy::lora;
      cfg.lora_ranks = {16};
      break;
    case Preset::lora_v:
      cfg.architecture = transformer_architecture(4, 96);
      cfg.n_trees = 5;
      cfg.levels = 3;
      cfg.branching = 4;
      cfg.child_policy = ChildPolicy::lora;
      cfg.lora_ranks = {8, 16, 32, 64};
      break;
    case Preset::mixed:
      cfg.architecture = transformer_architecture(4, 96);
      cfg.n_trees = 5;
      cfg.levels = 3;
      cfg.branching = 4;
      cfg.child_policy = ChildPolicy::mixed;
      cfg.lora_ranks = {16};
      cfg.revert_prob = 0.0;
      break;
    case Preset::deep:
      cfg.architecture = transformer_architecture(14, 96);
      cfg.n_trees = 1;
      cfg.levels = 5;
      cfg.branching = 3;
      cfg.child_policy = ChildPolicy::full;
      break;
    case Preset::merge:
      cfg.architecture = transformer_architecture(4, 96);
      cfg.n_trees = 3;
      cfg.merge_topology = true;
      cfg.merge_children = 5;
      cfg.child_policy = ChildPolicy::full;
      break;
    case Preset::gpc:
      cfg.architecture = transformer_architecture(2, 32);
      cfg.n_trees = 1;
      cfg.levels = 3;
      cfg.branching = 1;
      break;
    case Preset::pc2:
      cfg.architecture = transformer_architecture(2, 32);
      cfg.n_trees = 1;
      cfg.levels = 2;
      cfg.branching = 2;
      break;
    case Preset::pcs:
      cfg.architecture = transformer_architecture(2, 32);
      cfg.n_trees = 2;
      cfg.levels = 2;
      cfg.branching = 1;
      cfg.tree_levels = {2, 1};
      break;
    case Preset::s3:
      cfg.architecture = transformer_architecture(2, 32);
      cfg.n_trees = 3;
      cfg.levels = 1;
      cfg.branching = 1;
      break;
  }
  cfg.lora_layers = lora_target_names(cfg.architecture);
  return cfg;
}

double kurtosis_score(const ModelWeights& m,
                      const std::vector<std::string>& layer_names) {
  std::vector<std::string> sorted = layer_names;
  std::sort(sorted.begin(), sorted.end());
  KahanSum score;
  int used = 0;
  for (const auto& name : sorted) {
    const TensorRecord* t = m.find(name);
    if (t == nullptr) {
      continue;
    }
    const double n = static_cast<double>(t->data.size());
    const double mean = sum_values(t->data) / n;
    const float* p = t->data.data();
    KahanSum s2sum, s4sum;
    constexpr int64_t kBlock = 4096;
    const int64_t len = static_cast<int64_t>(t->data.size());
    for (int64_t b = 0; b < len; b += kBlock) {
      const int64_t e = std::min(len, b + kBlock);
      double b2 = 0, b4 = 0;
      for (int64_t i = b; i < e; ++i) {
        const double d = static_cast<double>(p[i]) - mean;
        const double d2 = d * d;
        b2 += d2;
        b4 += d2 * d2;
      }
      s2sum.add(b2);
      s4sum.add(b4);
    }
    const double m2 = s2sum.value() / n;
    if (m2 <= 0) {
      continue;
    }
    const double m4 = s4sum.value() / n;
    score.add(m4 / (m2 * m2));
    ++used;
  }
  if (used == 0) {
    throw Error("kurtosis_score: no usable layers");
  }
  return score.value();
}

ModelWeights generate_root(const SimConfig& cfg, int tree_index) {
  if (cfg.architecture.empty()) {
    throw Error("simgen: empty architecture");
  }
  const double step = expected_ft_step(cfg);
  ModelWeights m;
  m.model_id = "t" + std::to_string(tree_index);
  for (const auto& spec : cfg.architecture) {
    Rng rng(mix_seed(cfg.seed,
                     "root/" + std::to_string(tree_index) + "/" + spec.name));
    const double sigma = layer_sigma(spec);
    const bool heavy = is_lora_layer(cfg, spec.name);
    TensorRecord t;
    t.name = spec.name;
    t.shape = spec.shape;
    const int64_t n = numel_of(spec);
    t.data.resize(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) {
      double v = sigma * rng.normal();
      if (heavy && rng.uniform() < cfg.root_spike_prob) {
        v *= cfg.root_spike_scale;
      }
      t.data[static_cast<size_t>(i)] = static_cast<float>(v);
    }
    // Tree-specific offset direction, scaled so any two roots sit at least
    // inter_root_separation expected child steps apart.
    const double target = cfg.inter_root_separation * step;
    if (target > 0) {
      std::vector<double> dir(static_cast<size_t>(n));
      double norm2 = 0;
      for (int64_t i = 0; i < n; ++i) {
        dir[static_cast<size_t>(i)] = rng.normal();
        norm2 += dir[static_cast<size_t>(i)] * dir[static_cast<size_t>(i)];
      }
      const double scale = target / std::sqrt(norm2);
      for (int64_t i = 0; i < n; ++i) {
        t.data[static_cast<size_t>(i)] +=
            static_cast<float>(dir[static_cast<size_t>(i)] * scale);
      }
    }
    m.tensors.push_back(std::move(t));
  }
  return m;
}

ModelWeights specialize_child(const ModelWeights& parent, const SimConfig& cfg,
                              Rng& rng) {
  std::vector<std::string> dense_buf;
  const auto& names = score_names(cfg, FinetuneKind::full, dense_buf);
  const double parent_score = kurtosis_score(parent, names);

  // The shrink mask is drawn once per child; only the noise is resampled.
  ModelWeights base = parent;
  std::vector<double> stds;
  stds.reserve(parent.tensors.size());
  for (size_t ti = 0; ti < base.tensors.size(); ++ti) {
    stds.push_back(layer_std(parent.tensors[ti]));
    const float thr = abs_percentile95(parent.tensors[ti]);
    shrink_tails(base.tensors[ti], thr, cfg.tail_shrink, rng);
  }

  const double jitter = std::exp(rng.uniform(-0.1, 0.1));
  for (int attempt = 0; attempt < cfg.retry_budget; ++attempt) {
    ModelWeights child = base;
    for (size_t ti = 0; ti < child.tensors.size(); ++ti) {
      const double noise = cfg.ft_noise_scale * jitter * stds[ti];
      for (float& x : child.tensors[ti].data) {
        x += static_cast<float>(noise * rng.normal());
      }
    }
    if (kurtosis_score(child, names) < parent_score) {
      return child;
    }
  }
  throw Error("retry budget exhausted: specialization step cannot reduce the "
              "directional score of '" +
              parent.model_id + "'");
}

ModelWeights generalize_child(const ModelWeights& parent, const SimConfig& cfg,
                              Rng& rng) {
  std::vector<std::string> dense_buf;
  const auto& names = score_names(cfg, FinetuneKind::full, dense_buf);
  const double parent_score = kurtosis_score(parent, names);

  std::vector<double> stds;
  stds.reserve(parent.tensors.size());
  for (const auto& t : parent.tensors) {
    stds.push_back(layer_std(t));
  }

  for (int attempt = 0; attempt < cfg.retry_budget; ++attempt) {
    ModelWeights child = parent;
    for (size_t ti = 0; ti < child.tensors.size(); ++ti) {
      const double scale = cfg.spike_scale * stds[ti];
      for (float& x : child.tensors[ti].data) {
        if (rng.uniform() < cfg.spike_prob) {
          x += static_cast<float>(scale * rng.normal());
        }
      }
    }
    if (kurtosis_score(child, names) > parent_score) {
      return child;
    }
  }
  throw Error("retry budget exhausted: generalization step cannot raise the "
              "directional score of '" +
              parent.model_id + "'");
}

ModelWeights lora_child(const ModelWeights& parent, const SimConfig& cfg,
                        int rank, Rng& rng) {
  return lora_child_with_delta(parent, cfg, rank, rng, nullptr, nullptr);
}

ModelWeights lora_child_with_delta(const ModelWeights& parent,
                                   const SimConfig& cfg, int rank, Rng& rng,
                                   const LoraDelta* parent_delta,
                                   LoraDelta* out_delta) {
  if (cfg.lora_layers.empty()) {
    throw Error("lora_child: config names no LoRA layers");
  }
  std::vector<std::string> targets = cfg.lora_layers;
  std::sort(targets.begin(), targets.end());
  for (const auto& name : targets) {
    const TensorRecord* t = parent.find(name);
    if (t == nullptr) {
      throw Error("lora_child: layer '" + name + "' missing from parent");
    }
    if (rank > std::min(t->view_rows(), t->view_cols())) {
      throw Error("rank too large for layer '" + name + "'");
    }
  }
  if (rank < 1) {
    throw Error("lora_child: rank must be >= 1");
  }

  const double parent_score = kurtosis_score(parent, targets);
  const double tau =
      std::exp(rng.uniform(std::log(cfg.lora_norm_lo), std::log(cfg.lora_norm_hi)));

  // Revert decision is drawn once; retries only refresh the new subspaces.
  // If the budget runs low the revert is dropped so the kurtosis constraint
  // can always be met with a plain independent delta.
  const bool want_revert =
      parent_delta != nullptr && rng.uniform() < cfg.revert_prob;
  const double beta = rng.uniform(cfg.revert_lo, cfg.revert_hi);

  for (int attempt = 0; attempt < cfg.retry_budget; ++attempt) {
    const bool revert_now = want_revert && attempt < cfg.retry_budget / 2;
    ModelWeights child = parent;
    LoraDelta delta;
    for (const auto& name : targets) {
      TensorRecord* t = nullptr;
      for (auto& tensor : child.tensors) {
        if (tensor.name == name) {
          t = &tensor;
          break;
        }
      }
      const int64_t rows = t->view_rows();
      const int64_t cols = t->view_cols();

      int c_rev = 0;
      const LoraLayerDelta* pd = nullptr;
      if (revert_now && parent_delta) {
        const auto it = parent_delta->find(name);
        if (it != parent_delta->end()) {
          pd = &it->second;
          c_rev = std::min({(pd->rank - 1) / 2, (rank - 1) / 2});
          c_rev = std::max(c_rev, 0);
        }
      }
      const int fresh = rank - c_rev;

      const Eigen::MatrixXd u = random_orthonormal(rng, rows, fresh);
      const Eigen::MatrixXd v = random_orthonormal(rng, cols, fresh);
      Eigen::VectorXd s(fresh);
      double s_norm2 = 0;
      for (int j = 0; j < fresh; ++j) {
        s(j) = rng.uniform(0.6, 1.0);
        s_norm2 += s(j) * s(j);
      }
      const double target_norm = tau * frobenius_norm(*parent.find(name));
      s *= target_norm / std::sqrt(s_norm2);

      Eigen::MatrixXd dm = u * s.asDiagonal() * v.transpose();
      LoraLayerDelta ld;
      ld.rows = rows;
      ld.cols = cols;
      ld.rank = rank;
      ld.left.resize(static_cast<size_t>(rows) * static_cast<size_t>(rank));
      ld.right.resize(static_cast<size_t>(cols) * static_cast<size_t>(rank));
      ld.sigma.resize(static_cast<size_t>(rank));
      for (int j = 0; j < fresh; ++j) {
        for (int64_t i = 0; i < rows; ++i) {
          ld.left[static_cast<size_t>(j) * rows + i] = u(i, j);
        }
        for (int64_t i = 0; i < cols; ++i) {
          ld.right[static_cast<size_t>(j) * cols + i] = v(i, j);
        }
        ld.sigma[static_cast<size_t>(j)] = s(j);
      }
      if (c_rev > 0) {
        const std::vector<int> idx = sample_indices(rng, pd->rank, c_rev);
        for (int j = 0; j < c_rev; ++j) {
          const int pj = idx[static_cast<size_t>(j)];
          Eigen::VectorXd pu(rows), pv(cols);
          for (int64_t i = 0; i < rows; ++i) {
            pu(i) = pd->left[static_cast<size_t>(pj) * rows + i];
          }
          for (int64_t i = 0; i < cols; ++i) {
            pv(i) = pd->right[static_cast<size_t>(pj) * cols + i];
          }
          const double ps = pd->sigma[static_cast<size_t>(pj)];
          dm.noalias() -= beta * ps * pu * pv.transpose();
          const int col = fresh + j;
          for (int64_t i = 0; i < rows; ++i) {
            ld.left[static_cast<size_t>(col) * rows + i] = -pu(i);
          }
          for (int64_t i = 0; i < cols; ++i) {
            ld.right[static_cast<size_t>(col) * cols + i] = pv(i);
          }
          ld.sigma[static_cast<size_t>(col)] = beta * ps;
        }
      }
      for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
          t->data[static_cast<size_t>(r * cols + c)] +=
              static_cast<float>(dm(r, c));
        }
      }
      delta.emplace(name, std::move(ld));
    }
    if (kurtosis_score(child, targets) < parent_score) {
      if (out_delta != nullptr) {
        *out_delta = std::move(delta);
      }
      return child;
    }
  }
  throw Error("retry budget exhausted: LoRA step cannot reduce the "
              "directional score of '" +
              parent.model_id + "'");
}

namespace {

struct ChildSpecEntry {
  int parent_index = 0;
  std::string id;
  FinetuneKind kind = FinetuneKind::full;
  int rank = 0;
};

}  // namespace

Population generate_graph(const SimConfig& cfg) {
  if (cfg.branching < 1 || cfg.levels < 1 || cfg.n_trees < 1) {
    throw Error("simgen: branching, levels and n_trees must be >= 1");
  }
  if (!(cfg.spike_prob > 0.0) || !(cfg.spike_prob < 1.0)) {
    throw Error("simgen: spike_prob must lie in (0, 1)");
  }
  if (!(cfg.tail_shrink >= 0.0) || !(cfg.tail_shrink < 1.0)) {
    throw Error("simgen: tail_shrink must lie in [0, 1)");
  }
  if (!cfg.tree_levels.empty() &&
      static_cast<int>(cfg.tree_levels.size()) != cfg.n_trees) {
    throw Error("simgen: tree_levels must list one depth per tree");
  }
  for (const int r : cfg.lora_ranks) {
    if (r < 1) {
      throw Error("simgen: LoRA ranks must be >= 1");
    }
  }

  Population pop;
  std::vector<LoraDelta> deltas;  // aligned with pop.models

  auto push_node = [&](ModelWeights&& w, std::optional<std::string> parent,
                       FinetuneKind kind, int rank,
                       std::vector<std::string> merge_parents,
                       LoraDelta&& delta) {
    ManifestNode n;
    n.model_id = w.model_id;
    n.parent_id = std::move(parent);
    n.stage = cfg.stage;
    n.kind = kind;
    n.lora_rank = kind == FinetuneKind::lora ? rank : 0;
    n.merge_parents = std::move(merge_parents);
    pop.manifest.nodes.push_back(std::move(n));
    pop.models.push_back(std::make_shared<ModelWeights>(std::move(w)));
    deltas.push_back(std::move(delta));
  };

  // Roots.
  for (int t = 0; t < cfg.n_trees; ++t) {
    push_node(generate_root(cfg, t), std::nullopt, FinetuneKind::root, 0, {},
              {});
  }

  if (cfg.merge_topology) {
    // Pairwise-merged roots, then merge_children specializations per base.
    const int roots = cfg.n_trees;
    std::vector<int> base_indices;
    for (int i = 0; i < roots; ++i) {
      base_indices.push_back(i);
    }
    for (int i = 0; i < roots; ++i) {
      for (int j = i + 1; j < roots; ++j) {
        ModelWeights merged =
            merge_models(*pop.models[static_cast<size_t>(i)],
                         *pop.models[static_cast<size_t>(j)]);
        merged.model_id = "m" + std::to_string(i) + std::to_string(j);
        const std::vector<std::string> parents = {
            pop.manifest.nodes[static_cast<size_t>(i)].model_id,
            pop.manifest.nodes[static_cast<size_t>(j)].model_id};
        base_indices.push_back(static_cast<int>(pop.models.size()));
        push_node(std::move(merged), std::nullopt, FinetuneKind::merge, 0,
                  parents, {});
      }
    }
    for (const int base : base_indices) {
      for (int k = 0; k < cfg.merge_children; ++k) {
        const std::string id =
            pop.manifest.nodes[static_cast<size_t>(base)].model_id + "." +
            std::to_string(k);
        Rng rng(mix_seed(cfg.seed, "node/" + id));
        ModelWeights child =
            specialize_child(*pop.models[static_cast<size_t>(base)], cfg, rng);
        child.model_id = id;
        push_node(std::move(child),
                  pop.manifest.nodes[static_cast<size_t>(base)].model_id,
                  FinetuneKind::full, 0, {}, {});
      }
    }
    validate_manifest(pop.manifest);
    return pop;
  }

  // Level-ordered expansion of the forest.
  std::vector<int> frontier;
  for (int t = 0; t < cfg.n_trees; ++t) {
    frontier.push_back(t);
  }
  const int max_levels = cfg.tree_levels.empty()
                             ? cfg.levels
                             : *std::max_element(cfg.tree_levels.begin(),
                                                 cfg.tree_levels.end());
  std::vector<int> tree_of = frontier;  // tree index per frontier node

  for (int level = 1; level < max_levels; ++level) {
    std::vector<ChildSpecEntry> specs;
    std::vector<int> spec_tree;
    for (size_t f = 0; f < frontier.size(); ++f) {
      const int parent_index = frontier[f];
      const int tree = tree_of[f];
      const int depth_limit =
          cfg.tree_levels.empty() ? cfg.levels
                                  : cfg.tree_levels[static_cast<size_t>(tree)];
      if (level >= depth_limit) {
        continue;
      }
      for (int k = 0; k < cfg.branching; ++k) {
        ChildSpecEntry spec;
        spec.parent_index = parent_index;
        spec.id = pop.manifest.nodes[static_cast<size_t>(parent_index)]
                      .model_id +
                  "." + std::to_string(k);
        Rng kind_rng(mix_seed(cfg.seed, "kind/" + spec.id));
        switch (cfg.child_policy) {
          case ChildPolicy::full:
            spec.kind = FinetuneKind::full;
            break;
          case ChildPolicy::lora:
            spec.kind = FinetuneKind::lora;
            spec.rank = cfg.lora_ranks[static_cast<size_t>(kind_rng.uniform_int(
                0, static_cast<int64_t>(cfg.lora_ranks.size()) - 1))];
            break;
          case ChildPolicy::mixed:
            if (kind_rng.uniform() < 0.5) {
              spec.kind = FinetuneKind::full;
            } else {
              spec.kind = FinetuneKind::lora;
              spec.rank = cfg.lora_ranks.front();
            }
            break;
        }
        specs.push_back(std::move(spec));
        spec_tree.push_back(tree);
      }
    }

    // Children of one level are independent given their parents; generate in
    // parallel, then append in spec order.
    std::vector<ModelWeights> generated(specs.size());
    std::vector<LoraDelta> gen_deltas(specs.size());
    parallel_for(static_cast<int64_t>(specs.size()), 0, [&](int64_t i) {
      const auto& spec = specs[static_cast<size_t>(i)];
      Rng rng(mix_seed(cfg.seed, "node/" + spec.id));
      const ModelWeights& parent =
          *pop.models[static_cast<size_t>(spec.parent_index)];
      ModelWeights child;
      if (spec.kind == FinetuneKind::lora) {
        const LoraDelta& parent_delta =
            deltas[static_cast<size_t>(spec.parent_index)];
        child = lora_child_with_delta(
            parent, cfg, spec.rank, rng,
            parent_delta.empty() ? nullptr : &parent_delta,
            &gen_deltas[static_cast<size_t>(i)]);
      } else if (cfg.stage == Stage::generalization) {
        child = generalize_child(parent, cfg, rng);
      } else {
        child = specialize_child(parent, cfg, rng);
      }
      child.model_id = spec.id;
      generated[static_cast<size_t>(i)] = std::move(child);
    });

    std::vector<int> next_frontier;
    std::vector<int> next_tree;
    for (size_t i = 0; i < specs.size(); ++i) {
      next_frontier.push_back(static_cast<int>(pop.models.size()));
      next_tree.push_back(spec_tree[i]);
      push_node(std::move(generated[i]),
                pop.manifest.nodes[static_cast<size_t>(specs[i].parent_index)]
                    .model_id,
                specs[i].kind, specs[i].rank, {}, std::move(gen_deltas[i]));
    }
    frontier = std::move(next_frontier);
    tree_of = std::move(next_tree);
  }

  validate_manifest(pop.manifest);
  return pop;
}

NodeSet make_node_set(const Population& pop, DistanceMetric metric,
                      const MetricConfig& mc) {
  NodeSet s;
  s.metric = metric;
  s.metric_config = mc;
  for (size_t i = 0; i < pop.models.size(); ++i) {
    ModelNode node;
    node.model_id = pop.manifest.nodes[i].model_id;
    node.stage = pop.manifest.nodes[i].stage;
    node.weights = pop.models[i];
    s.nodes.push_back(std::move(node));
  }
  return s;
}

ModelWeights prune_model(const ModelWeights& m, double fraction) {
  if (!(fraction >= 0.0) || !(fraction < 1.0)) {
    throw Error("prune fraction must lie in [0, 1)");
  }
  ModelWeights out = m;
  for (auto& t : out.tensors) {
    const size_t n = t.data.size();
    const size_t kill = static_cast<size_t>(
        std::floor(fraction * static_cast<double>(n)));
    if (kill == 0) {
      continue;
    }
    std::vector<int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::nth_element(order.begin(), order.begin() + static_cast<ptrdiff_t>(kill),
                     order.end(), [&](int64_t a, int64_t b) {
                       const float aa = std::abs(t.data[static_cast<size_t>(a)]);
                       const float ab = std::abs(t.data[static_cast<size_t>(b)]);
                       if (aa != ab) {
                         return aa < ab;
                       }
                       return a < b;  // ties by index
                     });
    for (size_t i = 0; i < kill; ++i) {
      t.data[static_cast<size_t>(order[i])] = 0.0f;
    }
  }
  return out;
}

ModelWeights quantize_model(const ModelWeights& m, QuantMode mode) {
  ModelWeights out = m;
  for (auto& t : out.tensors) {
    if (mode == QuantMode::f16) {
      for (float& x : t.data) {
        x = f16_to_f32(f32_to_f16(x));
      }
    } else {
      float max_abs = 0.0f;
      for (const float x : t.data) {
        max_abs = std::max(max_abs, std::abs(x));
      }
      if (max_abs == 0.0f) {
        continue;
      }
      const double scale = static_cast<double>(max_abs) / 127.0;
      for (float& x : t.data) {
        const long q = std::lround(static_cast<double>(x) / scale);
        const long clamped = std::clamp(q, -127l, 127l);
        x = static_cast<float>(static_cast<double>(clamped) * scale);
      }
    }
  }
  return out;
}

ModelWeights merge_models(const ModelWeights& u, const ModelWeights& v) {
  if (u.tensors.size() != v.tensors.size()) {
    throw Error("merge_models: tensor sets differ");
  }
  const auto v_index = tensor_index(v);
  ModelWeights out;
  out.model_id = u.model_id + "+" + v.model_id;
  for (const auto& t : u.tensors) {
    const auto it = v_index.find(t.name);
    if (it == v_index.end() || it->second->shape != t.shape) {
      throw Error("merge_models: layer '" + t.name + "' mismatch");
    }
    TensorRecord mean;
    mean.name = t.name;
    mean.shape = t.shape;
    mean.data.resize(t.data.size());
    const float* a = t.data.data();
    const float* b = it->second->data.data();
    for (size_t i = 0; i < t.data.size(); ++i) {
      mean.data[i] = static_cast<float>(
          (static_cast<double>(a[i]) + static_cast<double>(b[i])) * 0.5);
    }
    out.tensors.push_back(std::move(mean));
  }
  return out;
}

}  // namespace mother
