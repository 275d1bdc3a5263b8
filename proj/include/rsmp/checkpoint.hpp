#pragma once

// Binary checkpoint format (all integers little-endian):
//
//   "RSMP"                       magic
//   u32                          format version
//   u32 n, n bytes               configuration as JSON text
//   u64                          completed iterations
//   u32                          tensor count, then per tensor:
//     u32 n, n bytes             name
//     u8                         dtype tag (0 = float32, 1 = float64)
//     u32 rank, rank x u32       shape
//     payload                    values, row-major
//   u32 n, n bytes               RNG state

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rsmp/autodiff.hpp"
#include "rsmp/config.hpp"

namespace rsmp {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

struct Checkpoint {
  TrainConfig config;
  std::uint64_t iteration = 0;
  /// Model parameters by name, followed by Adam moments named
  /// "adam.m/<param>" and "adam.v/<param>".
  std::vector<NamedTensor> tensors;
  std::string rng_state;

  const Tensor<float>* find(const std::string& name) const;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint deserialize_checkpoint(const std::string& bytes);

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace rsmp
