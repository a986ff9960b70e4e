#pragma once

// Binary model checkpoints. Byte layout (all integers little-endian):
//
//   char[8]  magic "T2ICKPT\0"
//   u32      format version
//   u32 n, n bytes   model config text (key=value lines)
//   u32 n, n bytes   design constants text
//   u64      seed
//   u32      tensor count, then per tensor:
//              u32 n, n bytes name; u8 trainable; u32 ndim; u64 dims[ndim];
//              f64 data[prod(dims)]
//   u8       optimizer present; if 1:
//              u64 step; f64 lr, beta1, beta2, eps; u32 count; tensor records
//   u32      CRC-32 of every preceding byte

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "t2i/generator.hpp"

namespace t2i {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct OptimizerRecord {
  std::uint64_t step = 0;
  double lr = 0, beta1 = 0, beta2 = 0, eps = 0;
  std::vector<NamedTensor> moments;  // "m/<param>" and "v/<param>"
};

// eps values, initializers, padding convention and kernel sizes.
std::string design_constants();

void save_checkpoint(const Generator& g, const std::string& path, const OptimizerRecord* optimizer = nullptr);

struct LoadedCheckpoint {
  Generator generator;
  std::optional<OptimizerRecord> optimizer;
};

// Errors: IoError (unreadable), FormatError (bad magic, truncation, CRC),
// VersionError, NameMismatchError (tensors do not fit the stored config).
// Nothing is returned on failure.
LoadedCheckpoint load_checkpoint(const std::string& path);

// Loads into an existing generator whose architecture must match the file.
// Throws NameMismatchError naming the first differing tensor; g is left
// untouched on any error.
std::optional<OptimizerRecord> load_checkpoint_into(Generator& g, const std::string& path);

}  // namespace t2i
