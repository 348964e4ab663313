// SPDX-License-Identifier: Apache-2.0
//
// Procedural multi-attribute road scenes. Each sample is fully determined by
// one 64-bit seed: attributes, layout, speckle, streak and noise fields all
// come from separate streams derived from it.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "miml/core/random.hpp"
#include "miml/model/network.hpp"

namespace miml::synth {

enum Place : std::uint32_t { kVerticalRoad = 0, kHorizontalRoad = 1, kCrossing = 2, kTJunction = 3 };
enum Weather : std::uint32_t { kSunny = 0, kRainy = 1, kFoggy = 2 };
enum Surface : std::uint32_t { kDry = 0, kWet = 1 };
enum Environment : std::uint32_t { kUrban = 0, kRural = 1, kHighway = 2 };

inline constexpr std::size_t kTaskCount = 4;
inline constexpr std::size_t kChannels = 3;

/// place (4), weather (3), surface (2), environment (3), in that order.
std::vector<model::TaskSpec> scene_task_set();

struct SceneAttributes {
  std::uint32_t place = 0;
  std::uint32_t weather = 0;
  std::uint32_t surface = 0;
  std::uint32_t environment = 0;

  bool operator==(const SceneAttributes&) const = default;
  /// Labels in scene_task_set() order.
  std::array<std::uint16_t, kTaskCount> labels() const;
};

struct GeneratorConfig {
  std::size_t sample_count = 2500;
  std::size_t image_size = 32;
  std::uint64_t seed = 1;
  /// P(wet | rainy); P(wet | not rainy) = 1 - rho.
  double correlation_rho = 0.9;
  /// Place weights are proportional to (k+1)^-gamma.
  double imbalance_gamma = 1.0;
  double noise_sigma = 6.0;

  /// Throws ConfigError.
  void validate() const;
};

/// Draw order: place, weather, environment, surface.
SceneAttributes sample_attributes(Rng& rng, const GeneratorConfig& cfg);

/// Seed of sample `index` in a dataset generated with `dataset_seed`.
std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index);

/// Attributes drawn from the sample's own attribute stream.
SceneAttributes attributes_for_seed(std::uint64_t seed, const GeneratorConfig& cfg);

/// 1 on road pixels, 0 elsewhere; [H*W] row-major. Depends on place and the
/// layout stream of `seed` only.
std::vector<std::uint8_t> road_mask(std::uint32_t place, std::uint64_t seed, const GeneratorConfig& cfg);

/// [3, H, W] channel-major 8-bit pixels.
std::vector<std::uint8_t> render_scene(const SceneAttributes& attrs, std::uint64_t seed, const GeneratorConfig& cfg);

}  // namespace miml::synth
