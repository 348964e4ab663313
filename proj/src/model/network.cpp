// SPDX-License-Identifier: Apache-2.0
#include "miml/model/network.hpp"

#include <bit>
#include <cmath>
#include <set>

#include "miml/core/errors.hpp"
#include "miml/core/random.hpp"

namespace miml::model {
namespace {

std::string enc(int layer, const char* part) {
  return "encoder.conv" + std::to_string(layer) + "." + part;
}
std::string enc_bn(int layer, const char* part) { return "encoder.bn" + std::to_string(layer) + "." + part; }
std::string dec(const std::string& task, const char* part) { return "decoder." + task + "." + part; }
std::string crit(const std::string& task, const char* part) { return "critic." + task + "." + part; }

ad::Tensor uniform_tensor(const std::string& name, ad::Shape shape, std::size_t fan_in, std::uint64_t seed) {
  Rng rng(derive_seed(seed, stream_id(name)));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(ad::shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return ad::Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

void validate_task_set(const std::vector<TaskSpec>& tasks) {
  if (tasks.empty()) throw ContractError("task set is empty");
  std::set<std::string> ids;
  for (const auto& t : tasks) {
    if (t.task_id.empty()) throw ContractError("task id must not be empty");
    if (t.class_count < 2) throw ContractError("task '" + t.task_id + "' needs at least 2 classes");
    if (!ids.insert(t.task_id).second) throw ContractError("duplicate task id '" + t.task_id + "'");
  }
}

const ad::Tensor& NetworkParams::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw LookupError("unknown parameter '" + name + "'");
  return it->second;
}

const TaskSpec& NetworkParams::task(const std::string& task_id) const {
  for (const auto& t : tasks)
    if (t.task_id == task_id) return t;
  throw LookupError("unknown task '" + task_id + "'");
}

NetworkParams NetworkParams::clone() const {
  NetworkParams out;
  out.tasks = tasks;
  out.image_size = image_size;
  out.leaky_alpha = leaky_alpha;
  out.batch_norm = batch_norm;
  for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.detach(t.requires_grad()));
  return out;
}

void NetworkParams::zero_grad() {
  for (auto& [name, t] : tensors) t.zero_grad();
}

std::size_t NetworkParams::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : tensors) n += t.numel();
  return n;
}

bool identical(const NetworkParams& a, const NetworkParams& b) {
  if (a.tasks != b.tasks || a.image_size != b.image_size ||
      std::bit_cast<std::uint64_t>(a.leaky_alpha) != std::bit_cast<std::uint64_t>(b.leaky_alpha)) {
    return false;
  }
  if (a.tensors.size() != b.tensors.size() || a.batch_norm.size() != b.batch_norm.size()) return false;
  auto same_bits = [](std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (std::bit_cast<std::uint64_t>(x[i]) != std::bit_cast<std::uint64_t>(y[i])) return false;
    return true;
  };
  for (auto ia = a.tensors.begin(), ib = b.tensors.begin(); ia != a.tensors.end(); ++ia, ++ib) {
    if (ia->first != ib->first || ia->second.shape() != ib->second.shape()) return false;
    if (!same_bits(ia->second.values(), ib->second.values())) return false;
  }
  for (auto ia = a.batch_norm.begin(), ib = b.batch_norm.begin(); ia != a.batch_norm.end(); ++ia, ++ib) {
    if (ia->first != ib->first) return false;
    if (!same_bits(ia->second.running_mean, ib->second.running_mean)) return false;
    if (!same_bits(ia->second.running_var, ib->second.running_var)) return false;
  }
  return true;
}

NetworkParams init_params(const std::vector<TaskSpec>& tasks, std::uint64_t seed, std::size_t image_size,
                          double leaky_alpha) {
  validate_task_set(tasks);
  if (image_size < arch::kInputSummaryGrid || image_size % arch::kInputSummaryGrid != 0) {
    throw ContractError("image size must be a positive multiple of 8, got " + std::to_string(image_size));
  }
  if (!(leaky_alpha > 0.0 && leaky_alpha < 1.0)) throw ContractError("leaky_alpha must lie in (0,1)");

  NetworkParams p;
  p.tasks = tasks;
  p.image_size = image_size;
  p.leaky_alpha = leaky_alpha;
  auto put = [&](const std::string& name, ad::Tensor t) { p.tensors.emplace(name, std::move(t)); };

  std::size_t in_ch = arch::kInputChannels;
  for (int layer = 1; layer <= 3; ++layer) {
    const std::size_t out_ch = arch::kEncoderWidths[layer - 1];
    put(enc(layer, "kernel"), uniform_tensor(enc(layer, "kernel"), {out_ch, in_ch, 3, 3}, in_ch * 9, seed));
    put(enc(layer, "bias"), ad::Tensor::zeros({out_ch}, true));
    put(enc_bn(layer, "gamma"), ad::Tensor::full({out_ch}, 1.0, true));
    put(enc_bn(layer, "beta"), ad::Tensor::zeros({out_ch}, true));
    p.batch_norm.emplace("encoder.bn" + std::to_string(layer), ad::BatchNormState::fresh(out_ch));
    in_ch = out_ch;
  }
  const std::size_t critic_in = arch::kSummaryWidth + arch::kInputSummaryWidth;
  for (const auto& t : tasks) {
    const auto& id = t.task_id;
    put(dec(id, "conv1.kernel"), uniform_tensor(dec(id, "conv1.kernel"),
                                                {arch::kSummaryWidth, arch::kLatentChannels, 3, 3},
                                                arch::kLatentChannels * 9, seed));
    put(dec(id, "conv1.bias"), ad::Tensor::zeros({arch::kSummaryWidth}, true));
    put(dec(id, "conv2.kernel"), uniform_tensor(dec(id, "conv2.kernel"), {t.class_count, arch::kSummaryWidth, 1, 1},
                                                arch::kSummaryWidth, seed));
    put(dec(id, "conv2.bias"), ad::Tensor::zeros({t.class_count}, true));
    put(crit(id, "layer1.weight"),
        uniform_tensor(crit(id, "layer1.weight"), {critic_in, arch::kCriticHidden}, critic_in, seed));
    put(crit(id, "layer1.bias"), ad::Tensor::zeros({arch::kCriticHidden}, true));
    put(crit(id, "layer2.weight"),
        uniform_tensor(crit(id, "layer2.weight"), {arch::kCriticHidden, 1}, arch::kCriticHidden, seed));
    put(crit(id, "layer2.bias"), ad::Tensor::zeros({1}, true));
  }
  return p;
}

namespace {

void check_images(const NetworkParams& params, const ad::Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != arch::kInputChannels || images.dim(2) != params.image_size ||
      images.dim(3) != params.image_size) {
    throw DimensionError("encode: expected images [N,3," + std::to_string(params.image_size) + "," +
                         std::to_string(params.image_size) + "], got " + ad::shape_string(images.shape()));
  }
}

ad::Tensor encode_impl(const NetworkParams& params, std::map<std::string, ad::BatchNormState>& bn,
                       const ad::Tensor& images, ad::BatchNormMode mode) {
  check_images(params, images);
  ad::Tensor h = images;
  for (int layer = 1; layer <= 3; ++layer) {
    h = ad::conv2d(h, params.at(enc(layer, "kernel")), params.at(enc(layer, "bias")),
                   arch::kEncoderStrides[layer - 1], 1);
    h = ad::leaky_relu(h, params.leaky_alpha);
    auto it = bn.find("encoder.bn" + std::to_string(layer));
    if (it == bn.end()) throw LookupError("missing batch-norm state encoder.bn" + std::to_string(layer));
    h = ad::batch_norm(h, params.at(enc_bn(layer, "gamma")), params.at(enc_bn(layer, "beta")), mode, it->second);
  }
  return h;
}

}  // namespace

ad::Tensor encode(NetworkParams& params, const ad::Tensor& images, ad::BatchNormMode mode) {
  return encode_impl(params, params.batch_norm, images, mode);
}

ad::Tensor encode(const NetworkParams& params, const ad::Tensor& images) {
  auto bn = params.batch_norm;
  return encode_impl(params, bn, images, ad::BatchNormMode::Eval);
}

DecoderOutput decode(const NetworkParams& params, const TaskSpec& task, const ad::Tensor& latent) {
  const auto& known = params.task(task.task_id);
  if (known.class_count != task.class_count) {
    throw LookupError("task '" + task.task_id + "' has " + std::to_string(known.class_count) +
                      " classes in the network, caller passed " + std::to_string(task.class_count));
  }
  if (latent.rank() != 4 || latent.dim(1) != arch::kLatentChannels) {
    throw DimensionError("decode: latent must be [N,64,H,W], got " + ad::shape_string(latent.shape()));
  }
  const auto& id = task.task_id;
  auto h = ad::conv2d(latent, params.at(dec(id, "conv1.kernel")), params.at(dec(id, "conv1.bias")), 1, 1);
  h = ad::leaky_relu(h, params.leaky_alpha);
  auto summary = ad::global_average_pool(h);
  auto logits = ad::global_average_pool(
      ad::conv2d(h, params.at(dec(id, "conv2.kernel")), params.at(dec(id, "conv2.bias")), 1, 0));
  return {std::move(logits), std::move(summary)};
}

ad::Tensor critic_score(const NetworkParams& params, const TaskSpec& task, const ad::Tensor& z_summary,
                        const ad::Tensor& input_summary) {
  const auto& id = params.task(task.task_id).task_id;
  if (z_summary.rank() != 2 || input_summary.rank() != 2 || z_summary.dim(0) != input_summary.dim(0)) {
    throw DimensionError("critic_score: summaries " + ad::shape_string(z_summary.shape()) + " and " +
                         ad::shape_string(input_summary.shape()) + " must be 2-D with equal row counts");
  }
  if (z_summary.dim(1) != arch::kSummaryWidth || input_summary.dim(1) != arch::kInputSummaryWidth) {
    throw DimensionError("critic_score: expected widths 32 and 64");
  }
  const ad::Tensor parts[] = {z_summary, input_summary};
  auto h = ad::add(ad::matmul(ad::concat(parts), params.at(crit(id, "layer1.weight"))),
                   params.at(crit(id, "layer1.bias")));
  h = ad::leaky_relu(h, params.leaky_alpha);
  auto s = ad::add(ad::matmul(h, params.at(crit(id, "layer2.weight"))), params.at(crit(id, "layer2.bias")));
  return ad::reshape(s, {z_summary.dim(0)});
}

ad::Tensor input_summary(const ad::Tensor& images) {
  if (images.rank() != 4 || images.dim(2) % arch::kInputSummaryGrid != 0 ||
      images.dim(3) % arch::kInputSummaryGrid != 0) {
    throw DimensionError("input_summary: expected [N,C,H,W] with H,W divisible by 8, got " +
                         ad::shape_string(images.shape()));
  }
  const std::size_t n = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const std::size_t g = arch::kInputSummaryGrid, bh = h / g, bw = w / g;
  const auto v = images.values();
  std::vector<double> out(n * g * g, 0.0);
  const double inv = 1.0 / static_cast<double>(c * bh * bw);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          out[s * g * g + (y / bh) * g + x / bw] += v[((s * c + ch) * h + y) * w + x];
  for (auto& o : out) o *= inv;
  return ad::Tensor({n, g * g}, std::move(out));
}

}  // namespace miml::model
