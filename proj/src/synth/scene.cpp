// SPDX-License-Identifier: Apache-2.0
#include "miml/synth/scene.hpp"

#include <algorithm>
#include <cmath>

#include "miml/core/errors.hpp"

namespace miml::synth {
namespace {

constexpr std::uint32_t kPlaceClasses = 4, kWeatherClasses = 3, kEnvironmentClasses = 3;

struct Canvas {
  std::size_t size;
  std::vector<double> px;  // [3, size, size], 0..255 scale

  explicit Canvas(std::size_t s) : size(s), px(kChannels * s * s, 0.0) {}
  double& at(std::size_t c, std::size_t y, std::size_t x) { return px[(c * size + y) * size + x]; }
  void set(std::size_t y, std::size_t x, const std::array<double, 3>& rgb) {
    for (std::size_t c = 0; c < kChannels; ++c) at(c, y, x) = rgb[c];
  }
};

struct RoadLayout {
  // Bands are [lo, hi) in pixels.
  std::size_t v_lo = 0, v_hi = 0;  // vertical band columns
  std::size_t h_lo = 0, h_hi = 0;  // horizontal band rows
  bool vertical = false, horizontal = false;
  bool vertical_lower_only = false;  // T-junction stem
};

std::size_t scaled(double px32, std::size_t size) {
  return static_cast<std::size_t>(std::lround(px32 * static_cast<double>(size) / 32.0));
}

RoadLayout make_layout(std::uint32_t place, Rng& layout, std::size_t size) {
  RoadLayout r;
  auto band = [&](std::size_t& lo, std::size_t& hi) {
    const double half = 4.0 + layout.uniform(0.0, 1.0);
    const double center = 16.0 + layout.uniform(-2.0, 2.0);
    lo = scaled(center - half, size);
    hi = std::min(size, scaled(center + half, size));
  };
  band(r.v_lo, r.v_hi);
  band(r.h_lo, r.h_hi);
  r.vertical = place == kVerticalRoad || place == kCrossing || place == kTJunction;
  r.horizontal = place == kHorizontalRoad || place == kCrossing || place == kTJunction;
  r.vertical_lower_only = place == kTJunction;
  return r;
}

bool on_road(const RoadLayout& r, std::size_t y, std::size_t x) {
  const bool in_h = r.horizontal && y >= r.h_lo && y < r.h_hi;
  bool in_v = r.vertical && x >= r.v_lo && x < r.v_hi;
  if (in_v && r.vertical_lower_only) in_v = y >= r.h_lo;
  return in_h || in_v;
}

Rng stream(std::uint64_t seed, std::string_view name) { return Rng(derive_seed(seed, stream_id(name))); }

void paint_background(Canvas& cv, std::uint32_t environment, Rng& layout, Rng& texture) {
  const std::size_t s = cv.size;
  switch (environment) {
    case kUrban: {
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) cv.set(y, x, {112, 112, 118});
      for (int b = 0; b < 7; ++b) {
        const std::size_t x0 = layout.uniform_index(s), y0 = layout.uniform_index(s);
        const std::size_t w = scaled(layout.uniform(4.0, 10.0), s), h = scaled(layout.uniform(4.0, 12.0), s);
        const double g = layout.uniform(80.0, 180.0);
        for (std::size_t y = y0; y < std::min(s, y0 + h); ++y)
          for (std::size_t x = x0; x < std::min(s, x0 + w); ++x) cv.set(y, x, {g, g, g + 4.0});
      }
      break;
    }
    case kRural:
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) {
          const double t = texture.uniform(-22.0, 22.0);
          cv.set(y, x, {62 + 0.4 * t, 132 + t, 48 + 0.3 * t});
        }
      break;
    default:
      for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x) cv.set(y, x, {38, 40, 44});
      break;
  }
}

void paint_road(Canvas& cv, const RoadLayout& road, std::uint32_t environment, Rng& layout) {
  const std::size_t s = cv.size;
  const double tone = layout.uniform(72.0, 92.0);
  const std::array<double, 3> asphalt{tone, tone, tone + 3.0};
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x)
      if (on_road(road, y, x)) cv.set(y, x, asphalt);
  if (environment != kHighway) return;
  // Dashed centre marks along each band.
  const std::size_t period = std::max<std::size_t>(4, scaled(6.0, s));
  const std::size_t dash = std::max<std::size_t>(2, period / 2);
  const std::size_t phase = layout.uniform_index(period);
  const std::array<double, 3> paint{225, 225, 210};
  if (road.horizontal) {
    const std::size_t row = (road.h_lo + road.h_hi) / 2;
    for (std::size_t x = 0; x < s; ++x)
      if ((x + phase) % period < dash) cv.set(row, x, paint);
  }
  if (road.vertical) {
    const std::size_t col = (road.v_lo + road.v_hi) / 2;
    for (std::size_t y = road.vertical_lower_only ? road.h_hi : 0; y < s; ++y)
      if ((y + phase) % period < dash) cv.set(y, col, paint);
  }
}

void paint_wet(Canvas& cv, const RoadLayout& road, Rng& speckle) {
  const std::size_t s = cv.size;
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) {
      if (!on_road(road, y, x)) continue;
      if (speckle.uniform() < 0.22) {
        const double v = speckle.uniform(205.0, 250.0);
        cv.set(y, x, {v, v, std::min(255.0, v + 5.0)});
      }
    }
}

void apply_weather(Canvas& cv, std::uint32_t weather, Rng& streak) {
  const std::size_t s = cv.size;
  const std::size_t plane = s * s;
  double* r = cv.px.data();
  double* g = r + plane;
  double* b = g + plane;
  switch (weather) {
    case kSunny:
      for (std::size_t i = 0; i < plane; ++i) {
        r[i] = 1.05 * r[i] + 34.0;
        g[i] = 1.05 * g[i] + 20.0;
        b[i] = 1.05 * b[i] - 12.0;
      }
      break;
    case kRainy: {
      for (std::size_t i = 0; i < plane; ++i) {
        r[i] = 0.85 * r[i] - 6.0;
        g[i] = 0.92 * g[i];
        b[i] = 0.95 * b[i] + 38.0;
      }
      const int streaks = 5 + static_cast<int>(streak.uniform_index(4));
      for (int k = 0; k < streaks; ++k) {
        const std::size_t x = streak.uniform_index(s);
        const std::size_t y0 = streak.uniform_index(s);
        const std::size_t len = scaled(streak.uniform(8.0, 20.0), s);
        for (std::size_t y = y0; y < std::min(s, y0 + len); ++y) {
          const std::size_t i = y * s + x;
          r[i] += 45.0;
          g[i] += 50.0;
          b[i] += 60.0;
        }
      }
      break;
    }
    default:
      for (std::size_t i = 0; i < kChannels * plane; ++i) cv.px[i] = 0.4 * cv.px[i] + 0.6 * 128.0;
      break;
  }
}

}  // namespace

std::vector<model::TaskSpec> scene_task_set() {
  return {{"place", 4, "place"}, {"weather", 3, "weather"}, {"surface", 2, "surface"}, {"environment", 3, "environment"}};
}

std::array<std::uint16_t, kTaskCount> SceneAttributes::labels() const {
  return {static_cast<std::uint16_t>(place), static_cast<std::uint16_t>(weather),
          static_cast<std::uint16_t>(surface), static_cast<std::uint16_t>(environment)};
}

void GeneratorConfig::validate() const {
  if (sample_count < 1) throw ConfigError("sample_count must be >= 1");
  if (image_size < 16 || image_size % 4 != 0) throw ConfigError("image_size must be a multiple of 4 and >= 16");
  if (!(correlation_rho >= 0.0 && correlation_rho <= 1.0)) throw ConfigError("correlation_rho must lie in [0,1]");
  if (!(imbalance_gamma >= 0.0) || !std::isfinite(imbalance_gamma)) throw ConfigError("imbalance_gamma must be >= 0");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ConfigError("noise_sigma must be >= 0");
}

SceneAttributes sample_attributes(Rng& rng, const GeneratorConfig& cfg) {
  std::array<double, kPlaceClasses> w{};
  double total = 0.0;
  for (std::uint32_t k = 0; k < kPlaceClasses; ++k) total += w[k] = std::pow(double(k + 1), -cfg.imbalance_gamma);
  SceneAttributes a;
  double u = rng.uniform() * total;
  a.place = kPlaceClasses - 1;
  for (std::uint32_t k = 0; k < kPlaceClasses; ++k) {
    if (u < w[k]) {
      a.place = k;
      break;
    }
    u -= w[k];
  }
  a.weather = static_cast<std::uint32_t>(rng.uniform_index(kWeatherClasses));
  a.environment = static_cast<std::uint32_t>(rng.uniform_index(kEnvironmentClasses));
  const double p_wet = a.weather == kRainy ? cfg.correlation_rho : 1.0 - cfg.correlation_rho;
  a.surface = rng.bernoulli(p_wet) ? kWet : kDry;
  return a;
}

std::uint64_t sample_seed(std::uint64_t dataset_seed, std::size_t index) {
  return derive_seed(derive_seed(dataset_seed, stream_id("samples")), index);
}

SceneAttributes attributes_for_seed(std::uint64_t seed, const GeneratorConfig& cfg) {
  Rng rng = stream(seed, "attributes");
  return sample_attributes(rng, cfg);
}

std::vector<std::uint8_t> road_mask(std::uint32_t place, std::uint64_t seed, const GeneratorConfig& cfg) {
  Rng layout = stream(seed, "layout");
  const RoadLayout road = make_layout(place, layout, cfg.image_size);
  const std::size_t s = cfg.image_size;
  std::vector<std::uint8_t> mask(s * s);
  for (std::size_t y = 0; y < s; ++y)
    for (std::size_t x = 0; x < s; ++x) mask[y * s + x] = on_road(road, y, x) ? 1 : 0;
  return mask;
}

std::vector<std::uint8_t> render_scene(const SceneAttributes& attrs, std::uint64_t seed, const GeneratorConfig& cfg) {
  if (attrs.place >= kPlaceClasses || attrs.weather >= kWeatherClasses || attrs.surface > 1 ||
      attrs.environment >= kEnvironmentClasses) {
    throw ContractError("render_scene: attribute index out of range");
  }
  Rng layout = stream(seed, "layout");
  Rng texture = stream(seed, "texture");
  Rng speckle = stream(seed, "speckle");
  Rng streak = stream(seed, "streak");
  Rng noise = stream(seed, "noise");

  Canvas cv(cfg.image_size);
  // The road layout is drawn first so road_mask() can replay it alone.
  const RoadLayout road = make_layout(attrs.place, layout, cfg.image_size);
  paint_background(cv, attrs.environment, layout, texture);
  paint_road(cv, road, attrs.environment, layout);
  if (attrs.surface == kWet) paint_wet(cv, road, speckle);
  apply_weather(cv, attrs.weather, streak);

  std::vector<std::uint8_t> out(cv.px.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = cv.px[i] + cfg.noise_sigma * noise.normal();
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
  }
  return out;
}

}  // namespace miml::synth
