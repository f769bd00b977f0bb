#pragma once

#include <memory>
#include <string>
#include <vector>

#include "mother/manifest.hpp"
#include "mother/metrics.hpp"
#include "mother/tensor.hpp"

namespace mother {

enum class DistanceMetric { ft, lora };

std::string to_string(DistanceMetric m);
DistanceMetric metric_from_string(const std::string& s);

/// A model plus the labels the recovery task assumes as given.
struct ModelNode {
  std::string model_id;
  Stage stage = Stage::specialization;
  std::shared_ptr<const ModelWeights> weights;
};

struct NodeSet {
  std::vector<ModelNode> nodes;
  DistanceMetric metric = DistanceMetric::ft;
  MetricConfig metric_config;

  int size() const { return static_cast<int>(nodes.size()); }
};

/// Dense square matrix of doubles, row-major.
class SquareMatrix {
 public:
  SquareMatrix() = default;
  explicit SquareMatrix(int n, double fill = 0.0)
      : n_(n), v_(static_cast<size_t>(n) * static_cast<size_t>(n), fill) {}

  int size() const { return n_; }
  double& at(int i, int j) { return v_[idx(i, j)]; }
  double at(int i, int j) const { return v_[idx(i, j)]; }

  bool operator==(const SquareMatrix&) const = default;

 private:
  size_t idx(int i, int j) const {
    return static_cast<size_t>(i) * static_cast<size_t>(n_) +
           static_cast<size_t>(j);
  }
  int n_ = 0;
  std::vector<double> v_;
};

/// Dense binary matrix (0/1), zero diagonal by construction of its builders.
class BinaryMatrix {
 public:
  BinaryMatrix() = default;
  explicit BinaryMatrix(int n)
      : n_(n), v_(static_cast<size_t>(n) * static_cast<size_t>(n), 0) {}

  int size() const { return n_; }
  uint8_t& at(int i, int j) { return v_[idx(i, j)]; }
  uint8_t at(int i, int j) const { return v_[idx(i, j)]; }

  bool operator==(const BinaryMatrix&) const = default;

 private:
  size_t idx(int i, int j) const {
    return static_cast<size_t>(i) * static_cast<size_t>(n_) +
           static_cast<size_t>(j);
  }
  int n_ = 0;
  std::vector<uint8_t> v_;
};

/// The assembled priors for one node set: distances D, direction K, stage T,
/// and the combined MDST cost M = D + lambda * (K xor T).
struct CostMatrices {
  SquareMatrix D;
  BinaryMatrix K;
  BinaryMatrix T;
  double lambda = 0.0;
  double c = 0.3;
  SquareMatrix M;
  std::vector<double> scores;  // directional score per node
};

/// Pairwise distances under the configured metric; infinite diagonal.
SquareMatrix build_distance_matrix(const NodeSet& s, int threads = 0);

/// Directional score per node (order matches s.nodes).
std::vector<double> directional_scores(const NodeSet& s, int threads = 0);

/// K_ij = 1 iff score_i < score_j. Ties leave both directions at 0.
BinaryMatrix build_direction_matrix(const std::vector<double>& scores);
BinaryMatrix build_direction_matrix(const NodeSet& s, int threads = 0);

/// T_ij = 1 iff the prospective child v_j is a generalization-stage node.
/// Diagonal stays 0.
BinaryMatrix build_stage_matrix(const NodeSet& s);

/// lambda = c * mean of the finite off-diagonal entries of D;
/// M_ij = D_ij + lambda * (K_ij xor T_ij), infinite diagonal.
std::pair<double, SquareMatrix> combine(const SquareMatrix& D,
                                        const BinaryMatrix& K,
                                        const BinaryMatrix& T, double c);

/// Convenience: assemble all matrices for a node set.
CostMatrices build_cost_matrices(const NodeSet& s, double c, int threads = 0);

}  // namespace mother
