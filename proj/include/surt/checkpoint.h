#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "surt/params.h"

namespace surt::nn {

inline constexpr char kCheckpointMagic[8] = {'S', 'U', 'R', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Layout (all integers little-endian u32):
//   magic "SURTCKPT" | version | parameter count |
//   per parameter: name length, UTF-8 name, rank, dims..., f32 payload (LE).
std::vector<std::uint8_t> encode_checkpoint(const ParamStore& store);
// Values only; optimizer state is not stored.
ParamStore decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const ParamStore& store, const std::filesystem::path& path);
ParamStore load_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into `target`, which must declare the same names
// and shapes.
void restore_values(ParamStore& target, const ParamStore& source);

}  // namespace surt::nn
