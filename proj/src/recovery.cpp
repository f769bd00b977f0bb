#include "mother/recovery.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace mother {

namespace {
using ordered_json = nlohmann::ordered_json;
}

std::string to_string(RootPolicyKind k) {
  return k == RootPolicyKind::all_roots ? "all" : "score-hint";
}

RootPolicyKind root_policy_from_string(const std::string& s) {
  if (s == "all") {
    return RootPolicyKind::all_roots;
  }
  if (s == "score-hint") {
    return RootPolicyKind::score_hint;
  }
  throw Error("unknown root policy '" + s + "' (expected all|score-hint)");
}

RecoveredGraph recover(const NodeSet& s, int k, const PipelineConfig& cfg) {
  const int n = s.size();
  if (n == 0) {
    throw Error("recover: empty node set");
  }
  if (k < 1 || k > n) {
    throw Error("recover: cluster count must lie in [1, n]");
  }

  ClusterOptions copts;
  copts.mode = cfg.cluster_mode;
  copts.layer_name = cfg.cluster_layer;
  copts.threads = cfg.threads;
  const ClusterAssignment assignment = cluster_models(s, k, copts);

  RecoveredGraph graph;
  graph.provenance.tool_version = kToolVersion;
  graph.provenance.metric = to_string(cfg.metric);
  graph.provenance.c = cfg.c;
  graph.provenance.epsilon_rel = cfg.metric_config.epsilon_rel;
  graph.provenance.clusters = k;
  graph.provenance.root_policy = to_string(cfg.root_policy);
  graph.provenance.cluster_mode =
      cfg.cluster_mode == ClusterMode::ft
          ? "ft"
          : (cfg.cluster_mode == ClusterMode::concat ? "concat"
                                                     : "single_layer");
  graph.provenance.distance_filter = cfg.metric_config.distance_filter.pattern();
  graph.provenance.direction_filter =
      cfg.metric_config.direction_filter.pattern();

  for (int cluster = 0; cluster < assignment.k; ++cluster) {
    std::vector<int> member_idx;
    for (int i = 0; i < n; ++i) {
      if (assignment.labels[static_cast<size_t>(i)] == cluster) {
        member_idx.push_back(i);
      }
    }
    RecoveredTree tree;
    try {
      if (member_idx.size() == 1) {
        tree.root = s.nodes[static_cast<size_t>(member_idx[0])].model_id;
        tree.nodes = {tree.root};
        tree.total_cost = 0.0;
      } else {
        NodeSet sub;
        sub.metric = cfg.metric;
        sub.metric_config = cfg.metric_config;
        for (const int i : member_idx) {
          sub.nodes.push_back(s.nodes[static_cast<size_t>(i)]);
        }
        const CostMatrices cm = build_cost_matrices(sub, cfg.c, cfg.threads);

        int gen_count = 0;
        for (const auto& node : sub.nodes) {
          if (node.stage == Stage::generalization) {
            ++gen_count;
          }
        }
        RootPolicy policy;
        policy.scores = cm.scores;
        policy.prefer_max_score = gen_count * 2 <= sub.size();
        if (cfg.root_policy == RootPolicyKind::score_hint) {
          int hint = 0;
          for (int i = 1; i < sub.size(); ++i) {
            const bool better =
                policy.prefer_max_score
                    ? cm.scores[static_cast<size_t>(i)] >
                          cm.scores[static_cast<size_t>(hint)]
                    : cm.scores[static_cast<size_t>(i)] <
                          cm.scores[static_cast<size_t>(hint)];
            if (better) {
              hint = i;
            }
          }
          policy.hint = hint;
        }
        const Arborescence arb = best_arborescence(cm.M, policy, cfg.threads);

        tree.root = sub.nodes[static_cast<size_t>(arb.root)].model_id;
        tree.total_cost = arb.total_cost;
        for (const auto& node : sub.nodes) {
          tree.nodes.push_back(node.model_id);
        }
        std::sort(tree.nodes.begin(), tree.nodes.end());
        for (int i = 0; i < sub.size(); ++i) {
          const int p = arb.parent[static_cast<size_t>(i)];
          if (p >= 0) {
            tree.parent_of[sub.nodes[static_cast<size_t>(i)].model_id] =
                sub.nodes[static_cast<size_t>(p)].model_id;
          }
        }
      }
    } catch (const Error& e) {
      throw Error("cluster " + std::to_string(cluster) + ": " + e.what());
    }
    graph.trees.push_back(std::move(tree));
  }

  std::sort(graph.trees.begin(), graph.trees.end(),
            [](const RecoveredTree& a, const RecoveredTree& b) {
              return a.root < b.root;
            });
  return graph;
}

EvalReport evaluate(const RecoveredGraph& pred, const GraphManifest& truth) {
  // The two node sets must coincide exactly.
  std::set<std::string> pred_ids;
  for (const auto& t : pred.trees) {
    for (const auto& id : t.nodes) {
      if (!pred_ids.insert(id).second) {
        throw Error("id mismatch: '" + id + "' appears in two recovered trees");
      }
    }
  }
  std::set<std::string> true_ids;
  for (const auto& n : truth.nodes) {
    true_ids.insert(n.model_id);
  }
  if (pred_ids != true_ids) {
    throw Error("id mismatch between recovered graph and manifest");
  }

  const auto true_tree_labels = truth.tree_labels();
  int k_true = 0;
  for (const int l : true_tree_labels) {
    k_true = std::max(k_true, l + 1);
  }
  const int k_pred = static_cast<int>(pred.trees.size());

  std::map<std::string, int> pred_cluster_of;
  std::map<std::string, std::string> pred_parent_of;
  for (int t = 0; t < k_pred; ++t) {
    for (const auto& id : pred.trees[static_cast<size_t>(t)].nodes) {
      pred_cluster_of[id] = t;
    }
    for (const auto& [child, parent] :
         pred.trees[static_cast<size_t>(t)].parent_of) {
      pred_parent_of[child] = parent;
    }
  }

  // Hungarian matching between predicted and true trees on shared members.
  std::vector<std::vector<int64_t>> counts(
      static_cast<size_t>(k_pred),
      std::vector<int64_t>(static_cast<size_t>(k_true), 0));
  for (size_t i = 0; i < truth.nodes.size(); ++i) {
    const int pc = pred_cluster_of.at(truth.nodes[i].model_id);
    ++counts[static_cast<size_t>(pc)][static_cast<size_t>(true_tree_labels[i])];
  }
  const std::vector<int> matched = match_clusters(counts);

  EvalReport report;
  int64_t agree = 0;
  for (int i = 0; i < k_pred; ++i) {
    if (matched[static_cast<size_t>(i)] >= 0) {
      agree += counts[static_cast<size_t>(i)]
                     [static_cast<size_t>(matched[static_cast<size_t>(i)])];
    }
  }
  report.clustering_accuracy =
      static_cast<double>(agree) / static_cast<double>(truth.nodes.size());

  // A node is "correctly clustered" when its predicted cluster is matched to
  // its true tree; wrongly clustered nodes forfeit their true edges.
  auto correctly_clustered = [&](size_t node_idx) {
    const int pc = pred_cluster_of.at(truth.nodes[node_idx].model_id);
    return matched[static_cast<size_t>(pc)] ==
           true_tree_labels[node_idx];
  };

  struct TreeTally {
    std::string root_id;
    int64_t edges = 0;
    int64_t correct = 0;
    bool singleton_ok = false;
  };
  std::vector<TreeTally> tally(static_cast<size_t>(k_true));
  for (size_t i = 0; i < truth.nodes.size(); ++i) {
    const int label = true_tree_labels[i];
    const int root_idx = truth.root_of(static_cast<int>(i));
    tally[static_cast<size_t>(label)].root_id =
        truth.nodes[static_cast<size_t>(root_idx)].model_id;
  }

  for (size_t i = 0; i < truth.nodes.size(); ++i) {
    const auto& node = truth.nodes[i];
    const int label = true_tree_labels[i];
    if (!node.parent_id) {
      // Root of a singleton tree: correct when isolated and predicted a root.
      tally[static_cast<size_t>(label)].singleton_ok =
          correctly_clustered(i) && !pred_parent_of.count(node.model_id);
      continue;
    }
    auto& t = tally[static_cast<size_t>(label)];
    ++t.edges;
    const auto pit = pred_parent_of.find(node.model_id);
    const std::string predicted =
        pit == pred_parent_of.end() ? std::string() : pit->second;
    const bool correct =
        predicted == *node.parent_id && correctly_clustered(i);
    if (correct) {
      ++t.correct;
      continue;
    }
    EdgeError err;
    err.child = node.model_id;
    err.predicted_parent = predicted;
    err.true_parent = *node.parent_id;
    // Reversed edge: the prediction carries (v -> Pa(v)) instead of
    // (Pa(v) -> v).
    const auto reverse = pred_parent_of.find(*node.parent_id);
    err.kind = (reverse != pred_parent_of.end() &&
                reverse->second == node.model_id)
                   ? EdgeError::Kind::wrong_direction
                   : EdgeError::Kind::wrong_placement;
    report.edge_errors.push_back(std::move(err));
  }

  KahanSum acc_sum;
  for (const auto& t : tally) {
    double acc = 0.0;
    if (t.edges > 0) {
      acc = static_cast<double>(t.correct) / static_cast<double>(t.edges);
    } else {
      acc = t.singleton_ok ? 1.0 : 0.0;
    }
    report.per_tree_accuracy[t.root_id] = acc;
    acc_sum.add(acc);
    report.total_true_edges += t.edges;
    report.correct_edges += t.correct;
  }
  report.graph_accuracy = acc_sum.value() / static_cast<double>(k_true);
  std::sort(report.edge_errors.begin(), report.edge_errors.end(),
            [](const EdgeError& a, const EdgeError& b) {
              return a.child < b.child;
            });
  return report;
}

namespace {

ordered_json provenance_to_json(const Provenance& p) {
  ordered_json j;
  j["tool"] = kToolName;
  j["tool_version"] = p.tool_version;
  j["metric"] = p.metric;
  j["c"] = p.c;
  j["epsilon_rel"] = p.epsilon_rel;
  j["clusters"] = p.clusters;
  j["root_policy"] = p.root_policy;
  j["cluster_mode"] = p.cluster_mode;
  j["distance_filter"] = p.distance_filter;
  j["direction_filter"] = p.direction_filter;
  return j;
}

Provenance provenance_from_json(const ordered_json& j) {
  Provenance p;
  p.tool_version = j.value("tool_version", std::string());
  p.metric = j.value("metric", std::string("ft"));
  p.c = j.value("c", 0.3);
  p.epsilon_rel = j.value("epsilon_rel", 1e-5);
  p.clusters = j.value("clusters", 0);
  p.root_policy = j.value("root_policy", std::string("all"));
  p.cluster_mode = j.value("cluster_mode", std::string("ft"));
  p.distance_filter = j.value("distance_filter", std::string());
  p.direction_filter = j.value("direction_filter", std::string());
  return p;
}

std::string dot_escape(const std::string& s) {
  std::string out;
  for (const char c : s) {
    if (c == '"' || c == '\\') {
      out.push_back('\\');
    }
    out.push_back(c);
  }
  return out;
}

}  // namespace

std::string render_graph(const RecoveredGraph& g, GraphFormat format) {
  if (format == GraphFormat::json) {
    ordered_json j;
    j["format_version"] = 1;
    j["provenance"] = provenance_to_json(g.provenance);
    j["trees"] = ordered_json::array();
    for (const auto& t : g.trees) {
      ordered_json tj;
      tj["root"] = t.root;
      tj["nodes"] = t.nodes;
      tj["edges"] = ordered_json::array();
      for (const auto& [child, parent] : t.parent_of) {  // std::map: sorted
        tj["edges"].push_back({{"parent", parent}, {"child", child}});
      }
      tj["total_cost"] = t.total_cost;
      j["trees"].push_back(std::move(tj));
    }
    return j.dump(2) + "\n";
  }
  std::ostringstream out;
  out << "digraph model_graph {\n";
  for (const auto& t : g.trees) {
    for (const auto& id : t.nodes) {
      out << "  \"" << dot_escape(id) << "\";\n";
    }
  }
  std::vector<std::pair<std::string, std::string>> edges;  // (parent, child)
  for (const auto& t : g.trees) {
    for (const auto& [child, parent] : t.parent_of) {
      edges.emplace_back(parent, child);
    }
  }
  std::sort(edges.begin(), edges.end());
  for (const auto& [parent, child] : edges) {
    out << "  \"" << dot_escape(parent) << "\" -> \"" << dot_escape(child)
        << "\";\n";
  }
  out << "}\n";
  return out.str();
}

void export_graph(const RecoveredGraph& g, GraphFormat format,
                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("cannot open '" + path.string() + "' for writing");
  }
  out << render_graph(g, format);
  if (!out) {
    throw Error("write failed for '" + path.string() + "'");
  }
}

RecoveredGraph load_recovered_graph(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open recovered graph '" + path.string() + "'");
  }
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error("malformed recovered graph: " + std::string(e.what()));
  }
  RecoveredGraph g;
  if (j.contains("provenance")) {
    g.provenance = provenance_from_json(j["provenance"]);
  }
  if (!j.contains("trees") || !j["trees"].is_array()) {
    throw Error("malformed recovered graph: missing trees");
  }
  for (const auto& tj : j["trees"]) {
    RecoveredTree t;
    t.root = tj.at("root").get<std::string>();
    for (const auto& n : tj.at("nodes")) {
      t.nodes.push_back(n.get<std::string>());
    }
    std::sort(t.nodes.begin(), t.nodes.end());
    for (const auto& e : tj.at("edges")) {
      t.parent_of[e.at("child").get<std::string>()] =
          e.at("parent").get<std::string>();
    }
    t.total_cost = tj.value("total_cost", 0.0);
    g.trees.push_back(std::move(t));
  }
  std::sort(g.trees.begin(), g.trees.end(),
            [](const RecoveredTree& a, const RecoveredTree& b) {
              return a.root < b.root;
            });
  return g;
}

void save_eval_report(const EvalReport& r, const std::filesystem::path& path) {
  ordered_json j;
  j["tool"] = kToolName;
  j["tool_version"] = kToolVersion;
  j["clustering_accuracy"] = r.clustering_accuracy;
  j["graph_accuracy"] = r.graph_accuracy;
  j["total_true_edges"] = r.total_true_edges;
  j["correct_edges"] = r.correct_edges;
  j["per_tree_accuracy"] = ordered_json::object();
  for (const auto& [root, acc] : r.per_tree_accuracy) {
    j["per_tree_accuracy"][root] = acc;
  }
  j["edge_errors"] = ordered_json::array();
  for (const auto& e : r.edge_errors) {
    j["edge_errors"].push_back(
        {{"child", e.child},
         {"predicted_parent", e.predicted_parent},
         {"true_parent", e.true_parent},
         {"kind", e.kind == EdgeError::Kind::wrong_direction
                      ? "wrong_direction"
                      : "wrong_placement"}});
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("cannot open '" + path.string() + "' for writing");
  }
  out << j.dump(2) << '\n';
}

std::string render_eval_table(const EvalReport& r) {
  std::ostringstream out;
  out << "tree                              accuracy\n";
  out << "----------------------------------------\n";
  for (const auto& [root, acc] : r.per_tree_accuracy) {
    out << root;
    for (size_t i = root.size(); i < 34; ++i) {
      out << ' ';
    }
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", acc);
    out << buf << "\n";
  }
  out << "----------------------------------------\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.4f", r.graph_accuracy);
  out << "graph accuracy                    " << buf << "\n";
  std::snprintf(buf, sizeof(buf), "%.4f", r.clustering_accuracy);
  out << "clustering accuracy               " << buf << "\n";
  out << "correct edges                     " << r.correct_edges << "/"
      << r.total_true_edges << "\n";
  return out.str();
}

std::vector<std::pair<int, double>> detect_merge_parents(
    const ModelWeights& m, const std::vector<ParentCluster>& clusters) {
  if (clusters.size() < 2) {
    throw Error("need >= 2 clusters for merged-parent detection");
  }
  std::vector<std::pair<int, double>> ranked;
  for (const auto& cluster : clusters) {
    if (cluster.members.empty()) {
      throw Error("degenerate center: cluster " +
                  std::to_string(cluster.cluster_id) + " has no members");
    }
    // Center = entrywise mean of the members, over the tensors every member
    // shares.
    const ModelWeights& first = *cluster.members.front();
    ModelWeights center;
    center.model_id = "center_" + std::to_string(cluster.cluster_id);
    for (const auto& t : first.tensors) {
      bool everywhere = true;
      for (const auto& member : cluster.members) {
        const TensorRecord* other = member->find(t.name);
        if (other == nullptr || other->shape != t.shape) {
          everywhere = false;
          break;
        }
      }
      if (!everywhere) {
        continue;
      }
      TensorRecord mean;
      mean.name = t.name;
      mean.shape = t.shape;
      mean.data.assign(t.data.size(), 0.0f);
      std::vector<double> acc(t.data.size(), 0.0);
      for (const auto& member : cluster.members) {
        const TensorRecord* other = member->find(t.name);
        for (size_t i = 0; i < t.data.size(); ++i) {
          acc[i] += static_cast<double>(other->data[i]);
        }
      }
      const double inv = 1.0 / static_cast<double>(cluster.members.size());
      for (size_t i = 0; i < t.data.size(); ++i) {
        mean.data[i] = static_cast<float>(acc[i] * inv);
      }
      center.tensors.push_back(std::move(mean));
    }
    if (center.tensors.empty()) {
      throw Error("degenerate center: cluster " +
                  std::to_string(cluster.cluster_id) +
                  " members share no tensors");
    }
    double sim = 0.0;
    try {
      sim = cosine_similarity(m, center);
    } catch (const Error& e) {
      throw Error("degenerate center: " + std::string(e.what()));
    }
    ranked.emplace_back(cluster.cluster_id, sim);
  }
  std::sort(ranked.begin(), ranked.end(),
            [](const auto& a, const auto& b) {
              if (a.second != b.second) {
                return a.second > b.second;
              }
              return a.first < b.first;
            });
  return ranked;
}

}  // namespace mother
