#pragma once

#include <filesystem>

#include "mother/tensor.hpp"

namespace mother {

// Checkpoint container, compatible with the safetensors layout:
//   [u64 little-endian header length N]
//   [N bytes UTF-8 JSON: name -> {dtype, shape, data_offsets}, plus
//    optional "__metadata__" string map]
//   [raw little-endian tensor bytes; offsets relative to this section]
//
// F32 is the native dtype; F16 tensors are widened to F32 on load.
// save_model writes the canonical encoding: sorted-key header, metadata
// carrying the model id, data laid out in header order.

struct LoadOptions {
  bool strict = true;  // reject NaN/Inf values
};

ModelWeights load_model(const std::filesystem::path& path,
                        const LoadOptions& opts = {});

void save_model(const ModelWeights& m, const std::filesystem::path& path);

}  // namespace mother
