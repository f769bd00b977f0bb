#include "mother/manifest.hpp"

#include <deque>
#include <fstream>
#include <unordered_set>

#include <json.hpp>

namespace mother {

namespace {
using ordered_json = nlohmann::ordered_json;
}

std::string to_string(Stage s) {
  return s == Stage::generalization ? "generalization" : "specialization";
}

Stage stage_from_string(const std::string& s) {
  if (s == "generalization") {
    return Stage::generalization;
  }
  if (s == "specialization") {
    return Stage::specialization;
  }
  throw Error("unknown stage label '" + s + "'");
}

std::string to_string(FinetuneKind k) {
  switch (k) {
    case FinetuneKind::root:
      return "root";
    case FinetuneKind::full:
      return "full";
    case FinetuneKind::lora:
      return "lora";
    case FinetuneKind::merge:
      return "merge";
  }
  return "root";
}

FinetuneKind kind_from_string(const std::string& s) {
  if (s == "root") {
    return FinetuneKind::root;
  }
  if (s == "full") {
    return FinetuneKind::full;
  }
  if (s == "lora") {
    return FinetuneKind::lora;
  }
  if (s == "merge") {
    return FinetuneKind::merge;
  }
  throw Error("unknown fine-tune kind '" + s + "'");
}

int GraphManifest::index_of(const std::string& id) const {
  for (size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].model_id == id) {
      return static_cast<int>(i);
    }
  }
  return -1;
}

const ManifestNode* GraphManifest::find(const std::string& id) const {
  const int i = index_of(id);
  return i < 0 ? nullptr : &nodes[static_cast<size_t>(i)];
}

int GraphManifest::root_of(int i) const {
  int cur = i;
  int hops = 0;
  while (nodes[static_cast<size_t>(cur)].parent_id.has_value()) {
    cur = index_of(*nodes[static_cast<size_t>(cur)].parent_id);
    if (cur < 0 || ++hops > static_cast<int>(nodes.size())) {
      throw Error("manifest parent chain broken at node index " +
                  std::to_string(i));
    }
  }
  return cur;
}

std::vector<int> GraphManifest::tree_labels() const {
  std::vector<int> labels(nodes.size(), -1);
  std::unordered_map<int, int> root_label;
  int next = 0;
  for (size_t i = 0; i < nodes.size(); ++i) {
    const int r = root_of(static_cast<int>(i));
    auto it = root_label.find(r);
    if (it == root_label.end()) {
      it = root_label.emplace(r, next++).first;
    }
    labels[i] = it->second;
  }
  return labels;
}

int GraphManifest::edge_distance(int i, int j) const {
  if (i == j) {
    return 0;
  }
  // Undirected BFS over parent/child links within the forest.
  std::vector<std::vector<int>> adj(nodes.size());
  for (size_t c = 0; c < nodes.size(); ++c) {
    if (nodes[c].parent_id) {
      const int p = index_of(*nodes[c].parent_id);
      adj[static_cast<size_t>(p)].push_back(static_cast<int>(c));
      adj[c].push_back(p);
    }
  }
  std::vector<int> dist(nodes.size(), -1);
  std::deque<int> queue{i};
  dist[static_cast<size_t>(i)] = 0;
  while (!queue.empty()) {
    const int cur = queue.front();
    queue.pop_front();
    if (cur == j) {
      return dist[static_cast<size_t>(cur)];
    }
    for (const int nb : adj[static_cast<size_t>(cur)]) {
      if (dist[static_cast<size_t>(nb)] < 0) {
        dist[static_cast<size_t>(nb)] = dist[static_cast<size_t>(cur)] + 1;
        queue.push_back(nb);
      }
    }
  }
  return -1;
}

void validate_manifest(const GraphManifest& g) {
  std::unordered_map<std::string, int> index;
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    if (!index.emplace(g.nodes[i].model_id, static_cast<int>(i)).second) {
      throw Error("duplicate model id '" + g.nodes[i].model_id +
                  "' in manifest");
    }
  }
  for (const auto& n : g.nodes) {
    if (n.parent_id && !index.count(*n.parent_id)) {
      throw Error("unknown parent '" + *n.parent_id + "' for node '" +
                  n.model_id + "'");
    }
    if (n.kind == FinetuneKind::merge) {
      if (n.merge_parents.size() != 2) {
        throw Error("merge arity: node '" + n.model_id +
                    "' must list exactly two merge parents");
      }
      for (const auto& p : n.merge_parents) {
        if (!index.count(p)) {
          throw Error("unknown merge parent '" + p + "' for node '" +
                      n.model_id + "'");
        }
      }
    } else if (!n.merge_parents.empty()) {
      throw Error("merge arity: node '" + n.model_id +
                  "' lists merge parents but is not a merge node");
    }
    if (n.kind == FinetuneKind::lora && n.lora_rank < 1) {
      throw Error("lora node '" + n.model_id + "' needs rank >= 1");
    }
    if (n.kind == FinetuneKind::root && n.parent_id) {
      throw Error("root node '" + n.model_id + "' must not have a parent");
    }
    if ((n.kind == FinetuneKind::full || n.kind == FinetuneKind::lora) &&
        !n.parent_id) {
      throw Error("node '" + n.model_id + "' of kind " + to_string(n.kind) +
                  " needs a parent");
    }
  }
  // Cycle check over parent links. 0 = unvisited, 1 = on stack, 2 = done.
  std::vector<int> state(g.nodes.size(), 0);
  for (size_t i = 0; i < g.nodes.size(); ++i) {
    if (state[i] != 0) {
      continue;
    }
    std::vector<int> stack;
    int cur = static_cast<int>(i);
    while (cur >= 0 && state[static_cast<size_t>(cur)] == 0) {
      state[static_cast<size_t>(cur)] = 1;
      stack.push_back(cur);
      const auto& parent = g.nodes[static_cast<size_t>(cur)].parent_id;
      cur = parent ? index.at(*parent) : -1;
    }
    if (cur >= 0 && state[static_cast<size_t>(cur)] == 1) {
      throw Error("cycle detected in manifest at node '" +
                  g.nodes[static_cast<size_t>(cur)].model_id + "'");
    }
    for (const int s : stack) {
      state[static_cast<size_t>(s)] = 2;
    }
  }
}

GraphManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw Error("cannot open manifest '" + path.string() + "'");
  }
  ordered_json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw Error("malformed manifest: " + std::string(e.what()));
  }
  GraphManifest g;
  g.format_version = j.value("format_version", 1);
  if (!j.contains("nodes") || !j["nodes"].is_array()) {
    throw Error("malformed manifest: missing nodes array");
  }
  for (const auto& nj : j["nodes"]) {
    ManifestNode n;
    n.model_id = nj.at("model_id").get<std::string>();
    if (nj.contains("parent_id") && !nj["parent_id"].is_null()) {
      n.parent_id = nj["parent_id"].get<std::string>();
    }
    n.stage = stage_from_string(nj.at("stage").get<std::string>());
    n.kind = kind_from_string(nj.value("kind", std::string("root")));
    if (n.kind == FinetuneKind::lora) {
      n.lora_rank = nj.value("rank", 0);
    }
    if (nj.contains("merge_parents")) {
      for (const auto& p : nj["merge_parents"]) {
        n.merge_parents.push_back(p.get<std::string>());
      }
    }
    g.nodes.push_back(std::move(n));
  }
  validate_manifest(g);
  return g;
}

void save_manifest(const GraphManifest& g, const std::filesystem::path& path) {
  validate_manifest(g);
  ordered_json j;
  j["format_version"] = g.format_version;
  j["nodes"] = ordered_json::array();
  for (const auto& n : g.nodes) {
    ordered_json nj;
    nj["model_id"] = n.model_id;
    nj["parent_id"] = n.parent_id ? ordered_json(*n.parent_id)
                                  : ordered_json(nullptr);
    nj["stage"] = to_string(n.stage);
    nj["kind"] = to_string(n.kind);
    if (n.kind == FinetuneKind::lora) {
      nj["rank"] = n.lora_rank;
    }
    if (n.kind == FinetuneKind::merge) {
      nj["merge_parents"] = n.merge_parents;
    }
    j["nodes"].push_back(std::move(nj));
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw Error("cannot open '" + path.string() + "' for writing");
  }
  out << j.dump(2) << '\n';
  if (!out) {
    throw Error("write failed for '" + path.string() + "'");
  }
}

}  // namespace mother
