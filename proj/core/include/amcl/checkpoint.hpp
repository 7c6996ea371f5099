#pragma once

#include <cstdint>
#include <string>

#include "amcl/ensemble.hpp"

namespace amcl {

/// Binary layout, all integers and reals little-endian:
///   "AMC1", u32 version, header fields, architecture, a length-prefixed
///   table of named f64 tensors (members, then fusion), the specialization
///   matrix and the assignment counter.
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes to `path.tmp` and renames over `path`.
void save_checkpoint(const EnsembleState& state, const std::string& path);
/// Throws FormatError (with byte offset) on corrupt or truncated input and
/// CompatibilityError on a version mismatch. Never returns partial state.
EnsembleState load_checkpoint(const std::string& path);

}  // namespace amcl
