#pragma once

#include <optional>
#include <string>

#include "riser/optimizer.hpp"
#include "riser/policy.hpp"

namespace riser {

// Checkpoint file layout (all integers little-endian):
//   magic "RISERCK1" | u32 format version | u32 vocab | u32 emb | u32 hidden |
//   u64 update counter | u32 param count |
//   per param: u16 name length, name bytes, u64 value count, f64 values |
//   optional trailer "OPTSTAT1": u64 step | per param: f64 m values, f64 v values
// Loading validates dims against the expected configuration.

void save_checkpoint(const std::string& path, const PolicyState& policy,
                     const AdamW* optimizer = nullptr);

PolicyState load_checkpoint(const std::string& path, const PolicyDims& expected,
                            AdamW* optimizer = nullptr);

/// Reads only the dims header; DataError on malformed files.
PolicyDims peek_checkpoint_dims(const std::string& path);

}  // namespace riser
