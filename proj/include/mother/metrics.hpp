#pragma once

#include <functional>
#include <memory>
#include <regex>
#include <string>

#include "mother/tensor.hpp"

namespace mother {

/// Which per-layer statistic drives the directional score. Kurtosis is the
/// default; the others exist for ablation studies.
enum class DirectionalStatistic { variance, skewness, kurtosis, entropy };

std::string to_string(DirectionalStatistic s);
DirectionalStatistic directional_statistic_from_string(const std::string& s);

/// Tensor-name predicate (ECMAScript regex, partial match). An empty pattern
/// matches every name.
class LayerFilter {
 public:
  LayerFilter() = default;
  explicit LayerFilter(std::string pattern);

  bool matches(std::string_view name) const;
  const std::string& pattern() const { return pattern_; }
  bool match_all() const { return re_ == nullptr; }

 private:
  std::string pattern_;
  std::shared_ptr<const std::regex> re_;
};

/// Default name pattern for the dense/fully-connected layers the directional
/// score reads, and for the layers LoRA adapters target.
const std::string& default_dense_pattern();
const std::string& default_lora_pattern();

struct MetricConfig {
  /// Relative SVD rank threshold: count sigma_i > epsilon_rel * sigma_max.
  double epsilon_rel = 1e-5;
  /// Layer set L for the distance metrics (default: every common layer).
  LayerFilter distance_filter;
  /// Layer set L for the directional score (default: dense layers).
  LayerFilter direction_filter{default_dense_pattern()};
  DirectionalStatistic directional_statistic = DirectionalStatistic::kurtosis;
  /// Optional sink for non-fatal notes (skipped or degenerate layers).
  std::function<void(const std::string&)> warn;
};

// -- distances ---------------------------------------------------------------

/// Euclidean norm of the elementwise difference of two same-shape tensors.
double layer_l2(const TensorRecord& a, const TensorRecord& b);

/// Mean of layer_l2 over the common selected layers.
double ft_distance(const ModelWeights& u, const ModelWeights& v,
                   const MetricConfig& cfg);

/// Count of singular values above epsilon_rel * sigma_max for the tensor's
/// 2-D view; 0 for an all-zero matrix.
int64_t effective_rank(const TensorRecord& m, double epsilon_rel);

/// Max over common selected layers of effective_rank(u_l - v_l).
int64_t lora_distance(const ModelWeights& u, const ModelWeights& v,
                      const MetricConfig& cfg);

/// Norm of the full flattened concatenation of common layers
/// (sqrt of the sum of squared per-layer distances).
double concat_l2_distance(const ModelWeights& u, const ModelWeights& v);

// -- direction ---------------------------------------------------------------

/// Sum over selected layers of the configured per-layer statistic
/// (kurtosis by default). Zero-variance layers are skipped with a warning;
/// it is an error when every selected layer is degenerate.
double directional_score(const ModelWeights& u, const MetricConfig& cfg);

/// Same reduction with an explicit statistic choice.
double ablation_statistic(const ModelWeights& u, DirectionalStatistic stat,
                          const MetricConfig& cfg);

// -- similarity ---------------------------------------------------------------

/// Cosine of the flattened concatenation of all common layers.
double cosine_similarity(const ModelWeights& u, const ModelWeights& v);

}  // namespace mother
