// SPDX-License-Identifier: Apache-2.0
#include "miml/synth/dataset.hpp"

#include <numeric>
#include <string>

#include "miml/core/binary_io.hpp"
#include "miml/core/errors.hpp"

namespace miml::synth {

using io::ByteReader;
using io::ByteWriter;

std::span<const std::uint8_t> Dataset::image(std::size_t i) const {
  if (i >= manifest.records.size()) throw ContractError("dataset: sample index " + std::to_string(i) + " out of range");
  const auto& r = manifest.records[i];
  return std::span<const std::uint8_t>(pixels).subspan(r.pixel_offset, manifest.image_bytes());
}

Dataset generate_dataset(const GeneratorConfig& cfg) {
  cfg.validate();
  Dataset d;
  d.manifest.tasks = scene_task_set();
  d.manifest.height = d.manifest.width = cfg.image_size;
  d.manifest.channels = kChannels;
  const std::size_t bytes = d.manifest.image_bytes();
  d.pixels.reserve(cfg.sample_count * bytes);
  d.manifest.records.reserve(cfg.sample_count);
  for (std::size_t i = 0; i < cfg.sample_count; ++i) {
    const std::uint64_t seed = sample_seed(cfg.seed, i);
    const SceneAttributes attrs = attributes_for_seed(seed, cfg);
    const auto labels = attrs.labels();
    SampleRecord rec;
    rec.index = i;
    rec.labels.assign(labels.begin(), labels.end());
    rec.seed = seed;
    rec.pixel_offset = d.pixels.size();
    const auto img = render_scene(attrs, seed, cfg);
    d.pixels.insert(d.pixels.end(), img.begin(), img.end());
    d.manifest.records.push_back(std::move(rec));
  }
  return d;
}

std::vector<std::uint8_t> encode_dataset(const Dataset& dataset) {
  const auto& m = dataset.manifest;
  if (dataset.pixels.size() != m.records.size() * m.image_bytes()) {
    throw ContractError("encode_dataset: pixel blob size does not match the manifest");
  }
  ByteWriter w;
  w.magic("MTSC");
  w.u32(kDatasetVersion);
  w.u32(static_cast<std::uint32_t>(m.records.size()));
  w.u32(static_cast<std::uint32_t>(m.height));
  w.u32(static_cast<std::uint32_t>(m.width));
  w.u32(static_cast<std::uint32_t>(m.channels));
  w.u32(static_cast<std::uint32_t>(m.tasks.size()));
  for (const auto& t : m.tasks) {
    w.short_string(t.task_id);
    w.u16(static_cast<std::uint16_t>(t.class_count));
  }
  for (const auto& r : m.records) {
    if (r.labels.size() != m.tasks.size()) throw ContractError("encode_dataset: record label count mismatch");
    for (auto l : r.labels) w.u16(l);
  }
  for (const auto& r : m.records) w.u64(r.seed);
  w.raw(dataset.pixels);
  return w.bytes();
}

Dataset decode_dataset(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.expect_magic("MTSC");
  const std::uint32_t version = r.u32("version");
  if (version != kDatasetVersion) {
    throw FormatError("version", "unsupported dataset version " + std::to_string(version));
  }
  Dataset d;
  auto& m = d.manifest;
  const std::uint32_t count = r.u32("sample_count");
  if (count == 0) throw FormatError("sample_count", "dataset holds no samples");
  m.height = r.u32("height");
  m.width = r.u32("width");
  m.channels = r.u32("channels");
  if (m.height == 0 || m.width == 0 || m.channels == 0) throw FormatError("height", "zero image dimension");
  const std::uint32_t task_count = r.u32("task_count");
  if (task_count == 0) throw FormatError("task_count", "dataset declares no tasks");
  for (std::uint32_t t = 0; t < task_count; ++t) {
    model::TaskSpec spec;
    spec.task_id = r.short_string("task_name");
    spec.class_count = r.u16("class_count");
    if (spec.class_count < 2) throw FormatError("class_count", "task '" + spec.task_id + "' has fewer than 2 classes");
    spec.category = spec.task_id;
    m.tasks.push_back(std::move(spec));
  }
  m.records.resize(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto& rec = m.records[i];
    rec.index = i;
    rec.pixel_offset = std::uint64_t{i} * m.image_bytes();
    rec.labels.resize(task_count);
    for (std::uint32_t t = 0; t < task_count; ++t) {
      rec.labels[t] = r.u16("labels");
      if (rec.labels[t] >= m.tasks[t].class_count) {
        throw FormatError("labels", "sample " + std::to_string(i) + " label out of range for task '" +
                                        m.tasks[t].task_id + "'");
      }
    }
  }
  for (auto& rec : m.records) rec.seed = r.u64("seeds");
  const auto blob = r.raw(std::size_t{count} * m.image_bytes(), "pixels");
  d.pixels.assign(blob.begin(), blob.end());
  if (r.remaining() != 0) throw FormatError("trailing", std::to_string(r.remaining()) + " unexpected trailing bytes");
  return d;
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  std::filesystem::path p = path;
  p += ".manifest.txt";
  return p;
}

void write_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  if (path.empty()) throw IoError("write_dataset: empty path");
  io::write_file_atomic(path, encode_dataset(dataset));
  std::string text = "# index";
  for (const auto& t : dataset.manifest.tasks) text += "\t" + t.task_id;
  text += "\tseed\n";
  for (const auto& rec : dataset.manifest.records) {
    text += std::to_string(rec.index);
    for (auto l : rec.labels) text += "\t" + std::to_string(l);
    text += "\t" + std::to_string(rec.seed) + "\n";
  }
  io::write_text_atomic(sidecar_path(path), text);
}

Dataset read_dataset(const std::filesystem::path& path) { return decode_dataset(io::read_file(path)); }

std::vector<std::size_t> audit_labels(const Dataset& dataset, const GeneratorConfig& cfg) {
  std::vector<std::size_t> bad;
  for (const auto& rec : dataset.manifest.records) {
    const auto expected = attributes_for_seed(rec.seed, cfg).labels();
    if (!std::equal(rec.labels.begin(), rec.labels.end(), expected.begin(), expected.end())) bad.push_back(rec.index);
  }
  return bad;
}

std::vector<std::vector<std::size_t>> batch_schedule(std::size_t n, std::size_t batch_size, std::uint64_t epoch_seed) {
  if (batch_size < 2) throw ContractError("batch_schedule: batch_size must be >= 2");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(epoch_seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  std::vector<std::vector<std::size_t>> out(n / batch_size);
  for (std::size_t b = 0; b < out.size(); ++b) {
    out[b].assign(order.begin() + static_cast<std::ptrdiff_t>(b * batch_size),
                  order.begin() + static_cast<std::ptrdiff_t>((b + 1) * batch_size));
  }
  return out;
}

ad::Tensor image_tensor(const Dataset& dataset, std::span<const std::size_t> indices) {
  const std::size_t bytes = dataset.manifest.image_bytes();
  std::vector<double> v;
  v.reserve(indices.size() * bytes);
  for (std::size_t i : indices)
    for (std::uint8_t p : dataset.image(i)) v.push_back(static_cast<double>(p) / 255.0);
  const auto& m = dataset.manifest;
  return ad::Tensor({indices.size(), m.channels, m.height, m.width}, std::move(v));
}

Batch make_batch(const Dataset& dataset, std::span<const std::size_t> indices) {
  Batch b;
  b.indices.assign(indices.begin(), indices.end());
  b.images = image_tensor(dataset, indices);
  b.labels.assign(dataset.manifest.tasks.size(), {});
  for (std::size_t t = 0; t < b.labels.size(); ++t) {
    b.labels[t].reserve(indices.size());
    for (std::size_t i : indices) b.labels[t].push_back(dataset.manifest.records[i].labels[t]);
  }
  return b;
}

BatchIterator::BatchIterator(const Dataset& dataset, std::size_t batch_size, std::uint64_t epoch_seed)
    : dataset_(&dataset), schedule_(batch_schedule(dataset.size(), batch_size, epoch_seed)) {}

bool BatchIterator::next(Batch& out) {
  if (cursor_ >= schedule_.size()) return false;
  out = make_batch(*dataset_, schedule_[cursor_++]);
  return true;
}

}  // namespace miml::synth
