#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mother/arborescence.hpp"
#include "mother/clustering.hpp"
#include "mother/manifest.hpp"
#include "mother/matrices.hpp"

namespace mother {

enum class RootPolicyKind { all_roots, score_hint };

std::string to_string(RootPolicyKind k);
RootPolicyKind root_policy_from_string(const std::string& s);

struct PipelineConfig {
  DistanceMetric metric = DistanceMetric::ft;
  double c = 0.3;
  MetricConfig metric_config;
  RootPolicyKind root_policy = RootPolicyKind::all_roots;
  ClusterMode cluster_mode = ClusterMode::ft;
  std::string cluster_layer;  // single_layer mode
  int threads = 0;
};

/// One recovered Model Tree, labeled with model ids.
struct RecoveredTree {
  std::string root;
  std::vector<std::string> nodes;                 // sorted
  std::map<std::string, std::string> parent_of;   // child -> parent
  double total_cost = 0.0;

  bool operator==(const RecoveredTree&) const = default;
};

/// Config snapshot stored with every recovered graph. Thread count is
/// deliberately absent: outputs are identical for any worker count.
struct Provenance {
  std::string tool_version;
  std::string metric;
  double c = 0.3;
  double epsilon_rel = 1e-5;
  int clusters = 0;
  std::string root_policy;
  std::string cluster_mode;
  std::string distance_filter;
  std::string direction_filter;

  bool operator==(const Provenance&) const = default;
};

struct RecoveredGraph {
  std::vector<RecoveredTree> trees;  // sorted by root id
  Provenance provenance;

  bool operator==(const RecoveredGraph&) const = default;
};

/// Full MoTHer pipeline: cluster, assemble per-cluster priors, run the MDST,
/// label with model ids.
RecoveredGraph recover(const NodeSet& s, int k, const PipelineConfig& cfg);

struct EdgeError {
  std::string child;
  std::string predicted_parent;  // empty when the child was predicted a root
  std::string true_parent;
  enum class Kind { wrong_placement, wrong_direction } kind =
      Kind::wrong_placement;
};

struct EvalReport {
  double clustering_accuracy = 0.0;
  double graph_accuracy = 0.0;
  std::map<std::string, double> per_tree_accuracy;  // key: true tree root id
  std::vector<EdgeError> edge_errors;               // sorted by child id
  int64_t total_true_edges = 0;
  int64_t correct_edges = 0;
};

/// Per-tree and graph-level accuracy of a recovered graph against ground
/// truth. A directed edge counts as correct when the predicted parent matches
/// and the child sits in the cluster matched to its true tree.
EvalReport evaluate(const RecoveredGraph& pred, const GraphManifest& truth);

enum class GraphFormat { json, dot };

void export_graph(const RecoveredGraph& g, GraphFormat format,
                  const std::filesystem::path& path);
std::string render_graph(const RecoveredGraph& g, GraphFormat format);
RecoveredGraph load_recovered_graph(const std::filesystem::path& path);

void save_eval_report(const EvalReport& r, const std::filesystem::path& path);
std::string render_eval_table(const EvalReport& r);

/// One candidate parent cluster for merged-model detection.
struct ParentCluster {
  int cluster_id = 0;
  std::vector<std::shared_ptr<const ModelWeights>> members;
};

/// Rank candidate parent clusters of a (suspected) merged model by cosine
/// similarity between the model and each cluster's mean weights, descending.
/// The top two are the predicted parents.
std::vector<std::pair<int, double>> detect_merge_parents(
    const ModelWeights& m, const std::vector<ParentCluster>& clusters);

}  // namespace mother
