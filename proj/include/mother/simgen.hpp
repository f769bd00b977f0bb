#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mother/manifest.hpp"
#include "mother/matrices.hpp"
#include "mother/tensor.hpp"

namespace mother {

struct LayerSpec {
  std::string name;
  std::vector<int64_t> shape;
  bool dense = false;  // participates in the directional-score layer set
};

/// Small transformer-block layout (query/key/value/output attention weights
/// plus a two-layer MLP whose weights carry the `dense` role).
std::vector<LayerSpec> transformer_architecture(int blocks, int dim);

enum class ChildPolicy { full, lora, mixed };

/// The populations used through the experiments, plus 3-node warm-up cases
/// and the merged-parent study.
enum class Preset { ft, lora_f, lora_v, mixed, deep, merge, gpc, pc2, pcs, s3 };

std::string to_string(Preset p);
Preset preset_from_string(const std::string& s);

struct SimConfig {
  uint64_t seed = 0;
  std::vector<LayerSpec> architecture;

  // Forest topology: each tree has `levels` levels with `branching` children
  // per internal node; tree_levels overrides the depth per tree.
  int n_trees = 5;
  int levels = 3;
  int branching = 4;
  std::vector<int> tree_levels;

  // Full fine-tuning dynamics.
  double ft_noise_scale = 0.05;  // noise sigma as a fraction of layer std
  double tail_shrink = 0.30;     // contraction of entries above the 95th pct

  // Generalization dynamics (sparse outlier spikes).
  double spike_prob = 0.01;
  double spike_scale = 3.0;

  // LoRA dynamics.
  std::vector<std::string> lora_layers;
  std::vector<int> lora_ranks = {8, 16, 32, 64};
  double lora_norm_lo = 0.05;  // delta Frobenius norm relative to the layer,
  double lora_norm_hi = 0.25;  //   log-uniform in [lo, hi]
  double revert_prob = 0.6;    // chance a deep child partially reverts its
  double revert_lo = 0.7;      //   parent's adaptation, scaled by a factor
  double revert_hi = 1.6;      //   drawn from [revert_lo, revert_hi]

  // Heavy-tail mixture applied to LoRA-target layers at the root, so delta
  // addition has kurtosis room to move down through the levels.
  double root_spike_prob = 0.02;
  double root_spike_scale = 4.0;

  double inter_root_separation = 10.0;  // multiples of the expected child step

  Stage stage = Stage::specialization;  // stage label applied to every node
  ChildPolicy child_policy = ChildPolicy::full;

  int retry_budget = 16;

  // Merged-parent study topology (pairwise-merged roots, then children).
  bool merge_topology = false;
  int merge_children = 5;
};

SimConfig preset_config(Preset p, uint64_t seed);

/// Layer names carrying the dense role (the directional-score set for
/// fully fine-tuned populations).
std::vector<std::string> dense_layer_names(const SimConfig& cfg);

/// Kurtosis sum over an explicit name set; the generator's rejection tests.
double kurtosis_score(const ModelWeights& m,
                      const std::vector<std::string>& layer_names);

// -- single-node generators ---------------------------------------------------

ModelWeights generate_root(const SimConfig& cfg, int tree_index);

/// Fine-tuning step: shrink the weight tails, add Gaussian noise, and resample
/// the noise until the directional score strictly drops.
ModelWeights specialize_child(const ModelWeights& parent, const SimConfig& cfg,
                              Rng& rng);

/// Pre-training-like step: sparse outlier spikes, resampled until the
/// directional score strictly rises.
ModelWeights generalize_child(const ModelWeights& parent, const SimConfig& cfg,
                              Rng& rng);

/// Low-rank adapter factors of one generated delta (left * diag(sigma) *
/// right^T), kept so descendants can partially revert their parent's update.
struct LoraLayerDelta {
  std::vector<double> left;   // rows x r, column-major
  std::vector<double> right;  // cols x r, column-major
  std::vector<double> sigma;  // r
  int64_t rows = 0;
  int64_t cols = 0;
  int rank = 0;
};
using LoraDelta = std::map<std::string, LoraLayerDelta>;

/// Adds an exactly rank-`rank` delta to every LoRA-target layer; other layers
/// stay bitwise identical.
ModelWeights lora_child(const ModelWeights& parent, const SimConfig& cfg,
                        int rank, Rng& rng);

/// Extended form used by generate_graph: reverts part of the parent's own
/// delta (when given), and reports the child's delta factors.
ModelWeights lora_child_with_delta(const ModelWeights& parent,
                                   const SimConfig& cfg, int rank, Rng& rng,
                                   const LoraDelta* parent_delta,
                                   LoraDelta* out_delta);

// -- population ----------------------------------------------------------------

struct Population {
  std::vector<std::shared_ptr<const ModelWeights>> models;  // manifest order
  GraphManifest manifest;
};

Population generate_graph(const SimConfig& cfg);

NodeSet make_node_set(const Population& pop, DistanceMetric metric,
                      const MetricConfig& mc);

// -- perturbations ---------------------------------------------------------------

/// Zero the floor(fraction*n) smallest-|value| entries of every tensor
/// (ties resolve toward the lower index).
ModelWeights prune_model(const ModelWeights& m, double fraction);

enum class QuantMode { f16, int8 };

/// f16: round-trip through IEEE-754 half precision. int8: per-tensor
/// symmetric quantize-dequantize with scale max|w|/127.
ModelWeights quantize_model(const ModelWeights& m, QuantMode mode);

/// Entrywise mean of two same-architecture models.
ModelWeights merge_models(const ModelWeights& u, const ModelWeights& v);

}  // namespace mother
