#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "camforge/nn/layers.hpp"

namespace camforge::nn {

// File layout, all integers little-endian:
//
//   magic     8 bytes   "CAMFORGE"
//   version   u32       kCheckpointVersion
//   count     u32       number of blobs
//   count times:
//     name_len  u32
//     name      name_len bytes, UTF-8, no terminator
//     ndims     u32       always 4
//     dims      4 x u32   n, c, h, w
//     data      n*c*h*w x f32 (IEEE-754 binary32, little-endian)
inline constexpr char kCheckpointMagic[8] = {'C', 'A', 'M', 'F', 'O', 'R', 'G', 'E'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedTensor> blobs);
std::vector<NamedTensor> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, std::span<const NamedTensor> blobs);
std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path);

// Snapshot of parameters and buffers, parameters first.
std::vector<NamedTensor> export_state(std::span<const NamedParameter> params,
                                      std::span<const NamedBuffer> buffers);
// Copies matching blobs into place; every parameter and buffer must be
// present with identical dims.
void import_state(std::span<const NamedTensor> blobs, std::span<NamedParameter> params,
                  std::span<NamedBuffer> buffers);

}  // namespace camforge::nn
