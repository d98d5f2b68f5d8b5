#pragma once

#include "cxrlm/model.hpp"

#include <string>

namespace cxrlm::model {

// Binary checkpoint: magic "KXTI", u32 version=1, u32 config-blob length plus
// JSON ModelConfig, then named tensors (u32 name length, name bytes, u32 rank,
// u32 dims..., row-major f64 little-endian payload). Written atomically.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

} // namespace cxrlm::model
