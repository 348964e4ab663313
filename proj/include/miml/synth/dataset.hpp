// SPDX-License-Identifier: Apache-2.0
//
// MTSC dataset container (little-endian):
//
//   "MTSC" | u32 version | u32 sample_count | u32 H | u32 W | u32 channels | u32 task_count
//   per task: u16 name_length | name bytes | u16 class_count
//   u16 labels[sample_count * task_count]
//   u64 seeds[sample_count]
//   u8  pixels[sample_count * channels * H * W]
//
// A text sidecar (<path>.manifest.txt) lists one record per line.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "miml/autodiff/tensor.hpp"
#include "miml/model/network.hpp"
#include "miml/synth/scene.hpp"

namespace miml::synth {

inline constexpr std::uint32_t kDatasetVersion = 1;

struct SampleRecord {
  std::size_t index = 0;
  std::vector<std::uint16_t> labels;  // one per task
  std::uint64_t seed = 0;
  std::uint64_t pixel_offset = 0;     // byte offset into the pixel blob
  bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
  std::vector<model::TaskSpec> tasks;
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = kChannels;
  std::vector<SampleRecord> records;
  bool operator==(const DatasetManifest&) const = default;

  std::size_t image_bytes() const { return channels * height * width; }
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<std::uint8_t> pixels;

  std::size_t size() const { return manifest.records.size(); }
  std::span<const std::uint8_t> image(std::size_t i) const;
};

/// Renders every sample of the configured dataset.
Dataset generate_dataset(const GeneratorConfig& cfg);

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset);
/// Throws FormatError naming the failing field.
Dataset decode_dataset(std::span<const std::uint8_t> bytes);

/// Writes the binary atomically plus the text sidecar next to it.
void write_dataset(const Dataset& dataset, const std::filesystem::path& path);
Dataset read_dataset(const std::filesystem::path& path);
std::filesystem::path sidecar_path(const std::filesystem::path& path);

/// Re-derives every record's attributes from its seed and compares labels.
/// Returns the indices that disagree (empty when the audit passes).
std::vector<std::size_t> audit_labels(const Dataset& dataset, const GeneratorConfig& cfg);

struct Batch {
  std::vector<std::size_t> indices;
  ad::Tensor images;                            // [B,3,H,W] in [0,1]
  std::vector<std::vector<std::size_t>> labels;  // [task][B]
};

/// Shuffles 0..n-1 with a generator seeded by epoch_seed and cuts it into
/// floor(n / batch_size) batches; the partial tail is dropped.
std::vector<std::vector<std::size_t>> batch_schedule(std::size_t n, std::size_t batch_size, std::uint64_t epoch_seed);

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices);

/// Pixels of the given samples as [B,3,H,W] doubles in [0,1].
ad::Tensor image_tensor(const Dataset& dataset, std::span<const std::size_t> indices);

class BatchIterator {
 public:
  /// Throws ContractError for batch_size < 2.
  BatchIterator(const Dataset& dataset, std::size_t batch_size, std::uint64_t epoch_seed);
  std::size_t batch_count() const { return schedule_.size(); }
  bool next(Batch& out);

 private:
  const Dataset* dataset_;
  std::vector<std::vector<std::size_t>> schedule_;
  std::size_t cursor_ = 0;
};

}  // namespace miml::synth
