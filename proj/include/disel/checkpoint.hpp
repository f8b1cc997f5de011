#pragma once

// Binary checkpoint for layer stacks and their adapters. Layout (all
// integers uint32 little-endian, all reals IEEE-754 binary64 little-endian,
// matrices row-major):
//
//   magic        8 bytes  "DSLCKPT\0"
//   version      u32      kCheckpointVersion
//   layer_count  u32
//   activation   u32      0 identity, 1 relu, 2 tanh
//   per layer:
//     d_out u32, d_in u32, has_bias u32, adapter_kind u32 (0 none, 1 delta, 2 lora, 3 gated)
//     w0    f64[d_out * d_in]
//     bias  f64[d_out]                      if has_bias
//     delta f64[d_out * d_in]               kind 1
//     rank u32, alpha f64, a f64[d_out * rank], b f64[rank * d_in]
//                                           kinds 2 and 3
//     wg f64[rank * d_in], bg f64[rank]     kind 3
//
// docs/FORMATS.md carries the same table.

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "disel/network.hpp"

namespace disel {

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string serialize_network(const Network& net);
/// Throws IoError on truncated or malformed input, InvalidArgument on
/// inconsistent shapes.
Network deserialize_network(std::string_view bytes);

void save_network(const Network& net, const std::filesystem::path& path);
Network load_network(const std::filesystem::path& path);

}  // namespace disel
