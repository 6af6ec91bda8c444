#pragma once
#include <string>

#include "aseg/network.hpp"

namespace aseg {

// Checkpoint container, little-endian binary:
//   magic "ADCN" | version u32 | num_classes u32 | layer_count u32
//   per layer: kind u8 | in u32 | out u32 | dilation u32 | flags u8
//              weights f32[out*in*k*k] | bias f32[out]
//              if batch norm: gamma, beta, running_mean, running_var f32[out]
//   metadata: iteration u64 | seed u64 | best validation dice f32 (-1 = never)
//   crc32 u32 over everything above
// flags: bit0 = batch norm, bit1 = dropout before, bits 2-3 = activation
// (0 relu, 1 softmax, 2 none).

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes `net` to `path`. Throws IoError when the file cannot be written.
void save_checkpoint(const Network& net, const std::string& path);

/// Reads a checkpoint. Throws CorruptCheckpointError on damaged files (bad
/// magic, truncation, CRC mismatch) and InvalidCheckpointError on intact
/// files this build cannot use (unknown version, malformed layer records).
Network load_checkpoint(const std::string& path);

}  // namespace aseg
