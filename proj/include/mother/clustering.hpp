#pragma once

#include <string>
#include <vector>

#include "mother/manifest.hpp"
#include "mother/matrices.hpp"

namespace mother {

/// Cluster ids aligned with node order; ids are dense in [0, k) and numbered
/// by first appearance, so equal partitions compare equal.
struct ClusterAssignment {
  std::vector<int> labels;
  int k = 0;
};

/// Which pairwise distance feeds the linkage.
///   ft           - mean per-layer l2 (the recovery default)
///   concat       - l2 over the full flattened concatenation
///   single_layer - l2 over one named layer (runtime shortcut)
enum class ClusterMode { ft, concat, single_layer };

struct ClusterOptions {
  ClusterMode mode = ClusterMode::ft;
  std::string layer_name;  // single_layer mode
  int threads = 0;
};

/// Pairwise distances for clustering under the chosen mode.
SquareMatrix clustering_distances(const NodeSet& s, const ClusterOptions& opts);

/// Single-linkage agglomerative clustering cut at exactly k clusters
/// (equivalently: drop the k-1 largest edges of the Euclidean MST).
ClusterAssignment cluster_from_distances(const SquareMatrix& dist, int k);

ClusterAssignment cluster_models(const NodeSet& s, int k,
                                 const ClusterOptions& opts = {});

/// Merge-gap heuristic for choosing k: cut above the largest relative jump
/// between consecutive single-linkage merge distances. Opt-in; the pipeline
/// normally expects k as given.
int suggest_cluster_count(const SquareMatrix& dist, int max_k = 0);

/// Best-permutation agreement between two labelings (Hungarian matching on
/// the confusion matrix), in [0, 1].
double assignment_accuracy(const std::vector<int>& pred,
                           const std::vector<int>& truth);

/// Accuracy of `pred` against the manifest's tree membership. node_ids align
/// with pred.labels and must exactly cover the manifest's node set.
double clustering_accuracy(const ClusterAssignment& pred,
                           const GraphManifest& truth,
                           const std::vector<std::string>& node_ids);

/// Max-weight column assignment for each row of a counts matrix
/// (rows = predicted clusters, cols = true clusters); -1 for unmatched rows.
std::vector<int> match_clusters(const std::vector<std::vector<int64_t>>& counts);

}  // namespace mother
