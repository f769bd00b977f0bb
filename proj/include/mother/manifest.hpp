#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mother/common.hpp"

namespace mother {

enum class Stage { generalization, specialization };

std::string to_string(Stage s);
Stage stage_from_string(const std::string& s);

/// How a node was derived from its parent(s). Roots carry `root`; merge nodes
/// have no parent link but exactly two merge_parents in other trees.
enum class FinetuneKind { root, full, lora, merge };

std::string to_string(FinetuneKind k);
FinetuneKind kind_from_string(const std::string& s);

struct ManifestNode {
  std::string model_id;
  std::optional<std::string> parent_id;
  Stage stage = Stage::specialization;
  FinetuneKind kind = FinetuneKind::root;
  int lora_rank = 0;                        // kind == lora
  std::vector<std::string> merge_parents;   // kind == merge, exactly two
};

/// Ground-truth description of a model population: a forest of parent links.
struct GraphManifest {
  int format_version = 1;
  std::vector<ManifestNode> nodes;

  int index_of(const std::string& id) const;
  const ManifestNode* find(const std::string& id) const;

  /// Index of the root of the tree containing node i.
  int root_of(int i) const;

  /// Tree labels in 0..k-1, ordered by first appearance of each root.
  std::vector<int> tree_labels() const;

  /// Undirected edge distance (hops) between two nodes of the same tree;
  /// -1 if they live in different trees.
  int edge_distance(int i, int j) const;
};

/// Forest invariants: unique ids, parents resolve, no cycles, merge arity.
void validate_manifest(const GraphManifest& g);

GraphManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const GraphManifest& g, const std::filesystem::path& path);

}  // namespace mother
