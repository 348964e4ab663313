// SPDX-License-Identifier: Apache-2.0
//
// MIML checkpoint container (little-endian):
//
//   "MIML" | u32 version | u32 image_size | f64 leaky_alpha
//   u32 task_count, then per task: str id | u16 class_count | str category
//   u32 tensor_count, then per tensor: str name | u32 rank | u32 dims[rank] | f64 values[]
//   u32 bn_count, then per entry: str name | u32 channels | f64 mean[] | f64 var[]
//   u8 has_training_state, and if 1:
//     u32 epochs_completed | u64 optimizer_step | per tensor (same order): f64 m[] | f64 v[]
//
// where str is a u16 length followed by the bytes.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "miml/model/network.hpp"

namespace miml::model {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume training at an epoch boundary.
struct TrainingState {
  std::uint32_t epochs_completed = 0;
  std::uint64_t optimizer_step = 0;
  std::map<std::string, std::vector<double>> first_moment;
  std::map<std::string, std::vector<double>> second_moment;

  bool operator==(const TrainingState&) const = default;
};

struct Checkpoint {
  NetworkParams params;
  std::optional<TrainingState> training;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
/// Throws FormatError naming the failing field; also rejects parameter sets
/// whose names or shapes do not match the architecture for the stored tasks.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace miml::model
