#include "stde/encoding.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace stde {

long long intersection_area(const Rect& a, const Rect& b) noexcept {
  const long long w = static_cast<long long>(std::min(a.x1, b.x1)) - std::max(a.x0, b.x0);
  const long long h = static_cast<long long>(std::min(a.y1, b.y1)) - std::max(a.y0, b.y0);
  if (a.area() == 0 || b.area() == 0 || w <= 0 || h <= 0) return 0;
  return w * h;
}

void SamplerConfig::validate() const {
  if (!(mu > 0.0 && mu <= 1.0)) throw std::invalid_argument("mu must be in (0, 1]");
  if (!(cf > 0.0 && cf <= 1.0)) throw std::invalid_argument("cf must be in (0, 1]");
}

Rect repair(Rect r, std::size_t height, std::size_t width) noexcept {
  if (r.x0 > r.x1) std::swap(r.x0, r.x1);
  if (r.y0 > r.y1) std::swap(r.y0, r.y1);
  const int w = static_cast<int>(width);
  const int h = static_cast<int>(height);
  r.x0 = std::clamp(r.x0, 0, w);
  r.x1 = std::clamp(r.x1, 0, w);
  r.y0 = std::clamp(r.y0, 0, h);
  r.y1 = std::clamp(r.y1, 0, h);
  return r;
}

Individual repair(Individual individual, std::size_t height, std::size_t width) {
  for (auto& r : individual.rects) r = repair(r, height, width);
  return individual;
}

bool is_repaired(const Individual& individual, std::size_t height, std::size_t width) noexcept {
  if (individual.rects.size() != individual.fk.size()) return false;
  const int w = static_cast<int>(width);
  const int h = static_cast<int>(height);
  return std::all_of(individual.rects.begin(), individual.rects.end(), [&](const Rect& r) {
    return 0 <= r.x0 && r.x0 <= r.x1 && r.x1 <= w && 0 <= r.y0 && r.y0 <= r.y1 && r.y1 <= h;
  });
}

MaskVolume synth_mask(const Individual& individual, std::size_t height, std::size_t width) {
  if (individual.rects.size() != individual.fk.size()) {
    throw std::invalid_argument("individual has mismatched rects/fk lengths");
  }
  MaskVolume mask(individual.frames(), height, width);
  for (std::size_t t = 0; t < individual.frames(); ++t) {
    if (!individual.fk[t]) continue;
    const Rect r = repair(individual.rects[t], height, width);
    mask.fill_rect(t, static_cast<std::size_t>(r.x0), static_cast<std::size_t>(r.y0), static_cast<std::size_t>(r.x1),
                   static_cast<std::size_t>(r.y1));
  }
  return mask;
}

std::size_t max_side(double mu, std::size_t extent) noexcept {
  const auto cap = static_cast<std::size_t>(std::floor(mu * static_cast<double>(extent)));
  return std::max<std::size_t>(1, std::min(cap, extent));
}

Individual sample_individual(Rng& rng, std::size_t frames, std::size_t height, std::size_t width,
                             const SamplerConfig& cfg) {
  cfg.validate();
  Individual v;
  v.rects.resize(frames);
  v.fk.assign(frames, false);

  const auto keyframes = std::min<std::size_t>(
      frames, static_cast<std::size_t>(std::ceil(cfg.cf * static_cast<double>(frames) - 1e-9)));
  // Partial Fisher-Yates: the first `keyframes` entries are a uniform subset.
  std::vector<std::size_t> order(frames);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t k = 0; k < keyframes; ++k) {
    const auto pick = k + static_cast<std::size_t>(rng.below(frames - k));
    std::swap(order[k], order[pick]);
    v.fk[order[k]] = true;
  }

  const auto max_w = max_side(cfg.mu, width);
  const auto max_h = max_side(cfg.mu, height);
  for (auto& r : v.rects) {
    const auto w = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(max_w)));
    const auto h = static_cast<int>(rng.uniform_int(1, static_cast<std::int64_t>(max_h)));
    r.x0 = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(width) - w));
    r.y0 = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(height) - h));
    r.x1 = r.x0 + w;
    r.y1 = r.y0 + h;
  }
  return v;
}

std::size_t keyframe_count(const Individual& individual) noexcept {
  return static_cast<std::size_t>(std::count(individual.fk.begin(), individual.fk.end(), true));
}

std::size_t area_of(const Individual& individual, std::size_t height, std::size_t width) {
  std::size_t area = 0;
  for (std::size_t t = 0; t < individual.frames(); ++t) {
    if (individual.fk[t]) area += static_cast<std::size_t>(repair(individual.rects[t], height, width).area());
  }
  return area;
}

void to_json(nlohmann::json& j, const Individual& individual) {
  auto fk = nlohmann::json::array();
  for (bool b : individual.fk) fk.push_back(b ? 1 : 0);
  auto rects = nlohmann::json::array();
  for (const auto& r : individual.rects) rects.push_back({r.x0, r.y0, r.x1, r.y1});
  j = nlohmann::json{{"fk", std::move(fk)}, {"rects", std::move(rects)}};
}

void from_json(const nlohmann::json& j, Individual& individual) {
  const auto& fk = j.at("fk");
  const auto& rects = j.at("rects");
  if (!fk.is_array() || !rects.is_array() || fk.size() != rects.size()) {
    throw std::invalid_argument("individual JSON needs equal-length 'fk' and 'rects' arrays");
  }
  individual.fk.clear();
  individual.rects.clear();
  for (const auto& b : fk) individual.fk.push_back(b.get<int>() != 0);
  for (const auto& r : rects) {
    if (!r.is_array() || r.size() != 4) throw std::invalid_argument("rect must be [x0,y0,x1,y1]");
    individual.rects.push_back({r[0].get<int>(), r[1].get<int>(), r[2].get<int>(), r[3].get<int>()});
  }
}

}  // namespace stde
