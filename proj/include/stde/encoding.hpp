#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "stde/rng.hpp"
#include "stde/video.hpp"

namespace stde {

/// Axis-aligned patch on one frame, half-open: columns [x0, x1), rows [y0, y1).
/// Coordinates may leave the frame during evolution; `repair` restores
/// 0 <= x0 <= x1 <= W and 0 <= y0 <= y1 <= H.
struct Rect {
  int x0 = 0;
  int y0 = 0;
  int x1 = 0;
  int y1 = 0;

  long long area() const noexcept {
    return x1 > x0 && y1 > y0 ? static_cast<long long>(x1 - x0) * (y1 - y0) : 0;
  }
  friend bool operator==(const Rect&, const Rect&) = default;
};

/// Area of the overlap of two rects (0 when disjoint or degenerate).
long long intersection_area(const Rect& a, const Rect& b) noexcept;

/// One population member: a rectangle per frame plus a keyframe bit per
/// frame. Only keyframe rectangles are rasterized; the others still take
/// part in mutation arithmetic.
struct Individual {
  std::vector<Rect> rects;
  std::vector<bool> fk;

  std::size_t frames() const noexcept { return rects.size(); }
  friend bool operator==(const Individual&, const Individual&) = default;
};

struct SamplerConfig {
  double mu = 0.4;
  double cf = 0.6;

  /// Throws std::invalid_argument unless both rates are in (0, 1].
  void validate() const;
};

/// Swap inverted corners, then clamp x into [0, W] and y into [0, H].
Individual repair(Individual individual, std::size_t height, std::size_t width);
Rect repair(Rect rect, std::size_t height, std::size_t width) noexcept;

bool is_repaired(const Individual& individual, std::size_t height, std::size_t width) noexcept;

MaskVolume synth_mask(const Individual& individual, std::size_t height, std::size_t width);

/// ceil(cf*T) keyframes at distinct uniform positions; every frame gets a
/// rectangle with side lengths uniform in [1, max(1, floor(mu*side))] placed
/// uniformly where it fits.
Individual sample_individual(Rng& rng, std::size_t frames, std::size_t height, std::size_t width,
                             const SamplerConfig& cfg);

std::size_t keyframe_count(const Individual& individual) noexcept;

/// Equals mask_area(synth_mask(individual, H, W)) for repaired input.
std::size_t area_of(const Individual& individual, std::size_t height, std::size_t width);

/// Per-frame side cap under the initialization rate.
std::size_t max_side(double mu, std::size_t extent) noexcept;

// {"fk":[0/1,...],"rects":[[x0,y0,x1,y1],...]}
void to_json(nlohmann::json& j, const Individual& individual);
void from_json(const nlohmann::json& j, Individual& individual);

}  // namespace stde
