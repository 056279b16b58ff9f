#pragma once

#include "anatomy_warp/smoothing.hpp"
#include "anatomy_warp/volume.hpp"

#include <cmath>
#include <cstdint>
#include <set>
#include <span>
#include <stdexcept>
#include <string>

namespace anatomy_warp {

/// Organ label paired with the amplitude C scaling its displacement.
/// Positive and negative C model distension and evacuation.
struct OrganAmplitude {
  std::int32_t label = 0;
  double amplitude = 0.0;
};

/// 1 where `labels == organ_label`, 0 elsewhere. An absent label gives the
/// all-zero volume.
template <typename Scalar = double>
Volume<Scalar> rasterize_indicator(const LabelVolume& labels, std::int32_t organ_label) {
  if (organ_label < 1)
    throw std::invalid_argument("rasterize_indicator: organ label must be >= 1, got " +
                                std::to_string(organ_label));
  return Volume<Scalar>(labels.geometry(),
                        (labels.values() == organ_label).template cast<Scalar>());
}

/// Voxel-step gradient: central differences inside, one-sided at the faces.
template <typename Scalar>
VectorField<Scalar> spatial_gradient(const Volume<Scalar>& vol) {
  const auto& g = vol.geometry();
  static constexpr const char* axis_names[3] = {"x", "y", "z"};
  for (int a = 0; a < 3; ++a)
    if (g.shape[a] < 2)
      throw std::invalid_argument(std::string("spatial_gradient: axis ") + axis_names[a] +
                                  " has length 1; need >= 2 samples");

  VectorField<Scalar> out(g);
  const auto [nx, ny, nz] = g.shape;
  const Scalar* f = vol.data();
  const std::int64_t strides[3] = {1, nx, nx * ny};
  for (int a = 0; a < 3; ++a) {
    Scalar* d = out.component(a).data();
    const std::int64_t st = strides[a];
    const std::int64_t n = g.shape[a];
    for (std::int64_t z = 0; z < nz; ++z)
      for (std::int64_t y = 0; y < ny; ++y)
        for (std::int64_t x = 0; x < nx; ++x) {
          const std::int64_t i = g.index(x, y, z);
          const std::int64_t pos = a == 0 ? x : (a == 1 ? y : z);
          if (pos == 0)
            d[i] = f[i + st] - f[i];
          else if (pos == n - 1)
            d[i] = f[i] - f[i - st];
          else
            d[i] = Scalar(0.5) * (f[i + st] - f[i - st]);
        }
  }
  return out;
}

inline void validate_organ_amplitudes(std::span<const OrganAmplitude> organs) {
  std::set<std::int32_t> seen;
  for (const auto& o : organs) {
    if (o.label < 1)
      throw std::invalid_argument("organ label must be >= 1, got " + std::to_string(o.label));
    if (!std::isfinite(o.amplitude))
      throw std::invalid_argument("amplitude for organ " + std::to_string(o.label) +
                                  " is not finite");
    if (!seen.insert(o.label).second)
      throw std::invalid_argument("duplicate organ label " + std::to_string(o.label));
  }
}

/// Anatomy-informed displacement field: the sum over organs of
/// C_organ * grad(G_sigma * S_organ), in voxel units.
///
/// Convolution and gradient are linear, so the organ indicators are first
/// combined into one amplitude-weighted map and smoothed once.
template <typename Scalar = double>
VectorField<Scalar> anatomy_field(const LabelVolume& labels, std::span<const OrganAmplitude> organs,
                                  const SmoothingSpec& spec) {
  spec.validate();
  validate_organ_amplitudes(organs);
  const auto& g = labels.geometry();

  Volume<Scalar> weighted(g);
  bool any = false;
  for (const auto& o : organs) {
    if (o.amplitude == 0.0) continue;
    const auto amp = static_cast<Scalar>(o.amplitude);
    auto& w = weighted.values();
    const auto& l = labels.values();
    for (std::int64_t i = 0; i < w.size(); ++i)
      if (l[i] == o.label) {
        w[i] += amp;
        any = true;
      }
  }
  if (!any) return VectorField<Scalar>(g);
  return spatial_gradient(gaussian_smooth(weighted, spec));
}

}  // namespace anatomy_warp
