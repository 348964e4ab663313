// SPDX-License-Identifier: Apache-2.0
#include "miml/model/checkpoint.hpp"

#include "miml/core/binary_io.hpp"
#include "miml/core/errors.hpp"

namespace miml::model {

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint) {
  const auto& p = checkpoint.params;
  io::ByteWriter w;
  w.magic("MIML");
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(p.image_size));
  w.f64(p.leaky_alpha);
  w.u32(static_cast<std::uint32_t>(p.tasks.size()));
  for (const auto& t : p.tasks) {
    w.short_string(t.task_id);
    w.u16(static_cast<std::uint16_t>(t.class_count));
    w.short_string(t.category);
  }
  w.u32(static_cast<std::uint32_t>(p.tensors.size()));
  for (const auto& [name, t] : p.tensors) {
    w.short_string(name);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : t.values()) w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(p.batch_norm.size()));
  for (const auto& [name, st] : p.batch_norm) {
    w.short_string(name);
    w.u32(static_cast<std::uint32_t>(st.running_mean.size()));
    for (double v : st.running_mean) w.f64(v);
    for (double v : st.running_var) w.f64(v);
  }
  w.u8(checkpoint.training ? 1 : 0);
  if (checkpoint.training) {
    const auto& ts = *checkpoint.training;
    w.u32(ts.epochs_completed);
    w.u64(ts.optimizer_step);
    for (const auto& [name, t] : p.tensors) {
      auto m = ts.first_moment.find(name);
      auto v = ts.second_moment.find(name);
      if (m == ts.first_moment.end() || v == ts.second_moment.end() || m->second.size() != t.numel() ||
          v->second.size() != t.numel()) {
        throw ContractError("training state has no matching moments for '" + name + "'");
      }
      for (double x : m->second) w.f64(x);
      for (double x : v->second) w.f64(x);
    }
  }
  return w.bytes();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes);
  r.expect_magic("MIML");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("version", "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint cp;
  auto& p = cp.params;
  p.image_size = r.u32("image_size");
  p.leaky_alpha = r.f64("leaky_alpha");
  const auto task_count = r.u32("task_count");
  for (std::uint32_t i = 0; i < task_count; ++i) {
    TaskSpec t;
    t.task_id = r.short_string("task.id");
    t.class_count = r.u16("task.class_count");
    t.category = r.short_string("task.category");
    p.tasks.push_back(std::move(t));
  }
  NetworkParams expected;
  try {
    expected = init_params(p.tasks, 0, p.image_size, p.leaky_alpha);
  } catch (const ContractError& e) {
    throw FormatError("tasks", std::string("checkpoint header is inconsistent: ") + e.what());
  }

  const auto tensor_count = r.u32("tensor_count");
  if (tensor_count != expected.tensors.size()) {
    throw FormatError("tensor_count", "checkpoint holds " + std::to_string(tensor_count) + " tensors, architecture has " +
                                          std::to_string(expected.tensors.size()));
  }
  for (std::uint32_t i = 0; i < tensor_count; ++i) {
    auto name = r.short_string("tensor.name");
    auto it = expected.tensors.find(name);
    if (it == expected.tensors.end()) throw FormatError("tensor.name", "unexpected parameter '" + name + "'");
    const auto rank = r.u32("tensor.rank");
    ad::Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(r.u32("tensor.shape"));
    if (shape != it->second.shape()) {
      throw FormatError("tensor.shape", "parameter '" + name + "' has shape " + ad::shape_string(shape) +
                                            ", expected " + ad::shape_string(it->second.shape()));
    }
    std::vector<double> values(ad::shape_numel(shape));
    for (auto& v : values) v = r.f64("tensor.values");
    p.tensors.emplace(std::move(name), ad::Tensor(std::move(shape), std::move(values), true));
  }

  const auto bn_count = r.u32("bn_count");
  if (bn_count != expected.batch_norm.size()) throw FormatError("bn_count", "unexpected batch-norm entry count");
  for (std::uint32_t i = 0; i < bn_count; ++i) {
    auto name = r.short_string("bn.name");
    auto it = expected.batch_norm.find(name);
    if (it == expected.batch_norm.end()) throw FormatError("bn.name", "unexpected batch-norm entry '" + name + "'");
    const auto channels = r.u32("bn.channels");
    if (channels != it->second.running_mean.size()) throw FormatError("bn.channels", "channel count mismatch for " + name);
    ad::BatchNormState st;
    st.running_mean.resize(channels);
    st.running_var.resize(channels);
    for (auto& v : st.running_mean) v = r.f64("bn.mean");
    for (auto& v : st.running_var) v = r.f64("bn.var");
    p.batch_norm.emplace(std::move(name), std::move(st));
  }

  const auto has_training = r.u8("has_training_state");
  if (has_training > 1) throw FormatError("has_training_state", "flag must be 0 or 1");
  if (has_training) {
    TrainingState ts;
    ts.epochs_completed = r.u32("epochs_completed");
    ts.optimizer_step = r.u64("optimizer_step");
    for (const auto& [name, t] : p.tensors) {
      std::vector<double> m(t.numel()), v(t.numel());
      for (auto& x : m) x = r.f64("first_moment");
      for (auto& x : v) x = r.f64("second_moment");
      ts.first_moment.emplace(name, std::move(m));
      ts.second_moment.emplace(name, std::move(v));
    }
    cp.training = std::move(ts);
  }
  if (r.remaining() != 0) throw FormatError("trailing", std::to_string(r.remaining()) + " unexpected trailing bytes");
  return cp;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  io::write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

}  // namespace miml::model
