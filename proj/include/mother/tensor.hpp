#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "mother/common.hpp"

namespace mother {

/// One named weight tensor: f32 values, row-major.
struct TensorRecord {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<float> data;

  int64_t numel() const {
    int64_t n = 1;
    for (const int64_t d : shape) {
      n *= d;
    }
    return n;
  }

  // 2-D view used by rank computations: [shape[0], product of the rest].
  int64_t view_rows() const { return shape.empty() ? 0 : shape.front(); }
  int64_t view_cols() const {
    return view_rows() == 0 ? 0 : numel() / view_rows();
  }
};

/// An ordered collection of named tensors; the sole input signal.
struct ModelWeights {
  std::string model_id;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(std::string_view name) const {
    for (const auto& t : tensors) {
      if (t.name == name) {
        return &t;
      }
    }
    return nullptr;
  }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& t : tensors) {
      n += t.numel();
    }
    return n;
  }
};

/// name -> tensor lookup for pairwise operations.
std::unordered_map<std::string_view, const TensorRecord*> tensor_index(
    const ModelWeights& m);

/// Structural invariants: non-empty model, unique names, shapes with every
/// dimension >= 1. With check_finite also rejects NaN/Inf entries.
void validate_model(const ModelWeights& m, bool check_finite);

}  // namespace mother
