#pragma once

#include "anatomy_warp/volume.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace anatomy_warp {

enum class InterpolationMode { trilinear, nearest };

/// Out-of-range sampling policy. Constant mode fills with `fill_value`.
struct BoundaryMode {
  enum class Kind { clamp_to_edge, constant } kind = Kind::clamp_to_edge;
  double fill_value = 0.0;

  static BoundaryMode clamp() { return {}; }
  static BoundaryMode constant(double value) {
    if (!std::isfinite(value))
      throw std::invalid_argument("constant boundary fill value must be finite");
    return {Kind::constant, value};
  }
};

namespace detail {

// Exact `a` when t == 0 so that integer sample positions reproduce stored
// values bit for bit (including signed zeros).
template <typename T>
inline T lerp_exact(T a, T b, T t) {
  return t == T(0) ? a : (T(1) - t) * a + t * b;
}

template <typename Scalar>
inline double fetch(const Volume<Scalar>& vol, std::int64_t x, std::int64_t y, std::int64_t z,
                    const BoundaryMode& boundary) {
  const auto& s = vol.shape();
  if (boundary.kind == BoundaryMode::Kind::constant) {
    if (!vol.geometry().contains(x, y, z)) return boundary.fill_value;
  } else {
    x = std::clamp<std::int64_t>(x, 0, s[0] - 1);
    y = std::clamp<std::int64_t>(y, 0, s[1] - 1);
    z = std::clamp<std::int64_t>(z, 0, s[2] - 1);
  }
  return static_cast<double>(vol(x, y, z));
}

template <typename Scalar>
double sample_unchecked(const Volume<Scalar>& vol, double cx, double cy, double cz,
                        InterpolationMode interp, const BoundaryMode& boundary) {
  if (interp == InterpolationMode::nearest) {
    // std::round rounds half away from zero.
    return fetch(vol, static_cast<std::int64_t>(std::round(cx)),
                 static_cast<std::int64_t>(std::round(cy)),
                 static_cast<std::int64_t>(std::round(cz)), boundary);
  }
  if (boundary.kind == BoundaryMode::Kind::clamp_to_edge) {
    const auto& s = vol.shape();
    cx = std::clamp(cx, 0.0, static_cast<double>(s[0] - 1));
    cy = std::clamp(cy, 0.0, static_cast<double>(s[1] - 1));
    cz = std::clamp(cz, 0.0, static_cast<double>(s[2] - 1));
  }
  const double fx = std::floor(cx), fy = std::floor(cy), fz = std::floor(cz);
  const double tx = cx - fx, ty = cy - fy, tz = cz - fz;
  const auto x0 = static_cast<std::int64_t>(fx);
  const auto y0 = static_cast<std::int64_t>(fy);
  const auto z0 = static_cast<std::int64_t>(fz);

  auto along_x = [&](std::int64_t y, std::int64_t z) {
    const double a = fetch(vol, x0, y, z, boundary);
    return tx == 0.0 ? a : lerp_exact(a, fetch(vol, x0 + 1, y, z, boundary), tx);
  };
  auto along_y = [&](std::int64_t z) {
    const double a = along_x(y0, z);
    return ty == 0.0 ? a : lerp_exact(a, along_x(y0 + 1, z), ty);
  };
  const double a = along_y(z0);
  return tz == 0.0 ? a : lerp_exact(a, along_y(z0 + 1), tz);
}

}  // namespace detail

/// Value of `vol` at a continuous voxel-space position.
template <typename Scalar>
double sample_at(const Volume<Scalar>& vol, const Eigen::Vector3d& coords, InterpolationMode interp,
                 const BoundaryMode& boundary = BoundaryMode::clamp()) {
  if (!coords.allFinite()) throw std::invalid_argument("sample_at: non-finite coordinates");
  return detail::sample_unchecked(vol, coords.x(), coords.y(), coords.z(), interp, boundary);
}

/// Backward warp of a single volume: output(p) = input(p + V(p)).
template <typename Scalar, typename FieldScalar>
Volume<Scalar> warp_volume(const Volume<Scalar>& vol, const VectorField<FieldScalar>& field,
                           InterpolationMode interp,
                           const BoundaryMode& boundary = BoundaryMode::clamp()) {
  require_same_geometry(vol.geometry(), field.geometry(), "warp");
  const auto& g = vol.geometry();
  const auto [nx, ny, nz] = g.shape;
  const auto& vx = field.component(0);
  const auto& vy = field.component(1);
  const auto& vz = field.component(2);
  if (!vx.allFinite() || !vy.allFinite() || !vz.allFinite())
    throw std::invalid_argument("warp: displacement field contains non-finite values");

  Volume<Scalar> out(g);
  for (std::int64_t z = 0; z < nz; ++z)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t x = 0; x < nx; ++x) {
        const std::int64_t i = g.index(x, y, z);
        const double v = detail::sample_unchecked(
            vol, static_cast<double>(x) + static_cast<double>(vx[i]),
            static_cast<double>(y) + static_cast<double>(vy[i]),
            static_cast<double>(z) + static_cast<double>(vz[i]), interp, boundary);
        out[i] = static_cast<Scalar>(v);
      }
  return out;
}

/// Backward warp of every channel with one shared field.
template <typename Scalar, typename FieldScalar>
MultiChannelVolume<Scalar> warp_image(const MultiChannelVolume<Scalar>& img,
                                      const VectorField<FieldScalar>& field,
                                      InterpolationMode interp = InterpolationMode::trilinear,
                                      const BoundaryMode& boundary = BoundaryMode::clamp()) {
  require_same_geometry(img.geometry(), field.geometry(), "warp_image");
  std::vector<Volume<Scalar>> channels;
  channels.reserve(img.channel_count());
  for (const auto& c : img) channels.push_back(warp_volume(c, field, interp, boundary));
  return MultiChannelVolume<Scalar>(std::move(channels));
}

/// Nearest-neighbour warp of a label map with clamp-to-edge sampling, so
/// every output label already occurs in the input.
template <typename FieldScalar>
LabelVolume warp_labels(const LabelVolume& labels, const VectorField<FieldScalar>& field) {
  require_same_geometry(labels.geometry(), field.geometry(), "warp_labels");
  return warp_volume(labels, field, InterpolationMode::nearest, BoundaryMode::clamp());
}

}  // namespace anatomy_warp
