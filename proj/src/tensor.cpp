#include "mother/tensor.hpp"

#include <cmath>
#include <unordered_set>

namespace mother {

std::unordered_map<std::string_view, const TensorRecord*> tensor_index(
    const ModelWeights& m) {
  std::unordered_map<std::string_view, const TensorRecord*> index;
  index.reserve(m.tensors.size());
  for (const auto& t : m.tensors) {
    index.emplace(t.name, &t);
  }
  return index;
}

void validate_model(const ModelWeights& m, bool check_finite) {
  if (m.tensors.empty()) {
    throw Error("empty model: '" + m.model_id + "' has no tensors");
  }
  std::unordered_set<std::string_view> seen;
  for (const auto& t : m.tensors) {
    if (!seen.insert(t.name).second) {
      throw Error("duplicate tensor name '" + t.name + "' in model '" +
                  m.model_id + "'");
    }
    if (t.shape.empty()) {
      throw Error("degenerate shape: tensor '" + t.name + "' has no dimensions");
    }
    for (const int64_t d : t.shape) {
      if (d <= 0) {
        throw Error("degenerate shape: tensor '" + t.name +
                    "' has a dimension <= 0");
      }
    }
    if (t.numel() != static_cast<int64_t>(t.data.size())) {
      throw Error("shape/data mismatch in tensor '" + t.name + "'");
    }
    if (check_finite) {
      for (const float v : t.data) {
        if (!std::isfinite(v)) {
          throw Error("non-finite value in tensor '" + t.name + "' of model '" +
                      m.model_id + "'");
        }
      }
    }
  }
}

}  // namespace mother
