#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "semicon/tensor.hpp"

namespace semicon {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

inline constexpr char kCheckpointMagic[] = "SMCK";
inline constexpr std::uint16_t kCheckpointVersion = 1;

/// "SMCK", u16 version, then records until end of file:
///   [u32 name length][UTF-8 name][u8 rank][u32 extent x rank][f32 payload]
/// All integers and reals little-endian.
std::vector<char> encode_checkpoint(const std::vector<NamedTensor>& records);
std::vector<NamedTensor> decode_checkpoint(const std::vector<char>& bytes);

void save_checkpoint(const std::string& path, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> load_checkpoint(const std::string& path);

}  // namespace semicon
