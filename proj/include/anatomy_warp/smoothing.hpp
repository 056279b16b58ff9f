#pragma once

#include "anatomy_warp/volume.hpp"

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace anatomy_warp {

enum class AnisotropyMode {
  /// Kernel is isotropic in millimetres: sigma along an axis is scaled by
  /// spacing_x / spacing_axis.
  physical_isotropic,
  /// Kernel is isotropic in voxels.
  voxel_isotropic,
};

struct SmoothingSpec {
  double sigma_inplane = 32.0;  // voxels along x
  AnisotropyMode anisotropy = AnisotropyMode::physical_isotropic;
  double truncation = 4.0;  // kernel half-width in multiples of sigma

  void validate() const {
    if (!(sigma_inplane > 0.0) || !std::isfinite(sigma_inplane))
      throw std::invalid_argument("smoothing sigma must be finite and > 0, got " +
                                  std::to_string(sigma_inplane));
    if (!(truncation > 0.0) || !std::isfinite(truncation))
      throw std::invalid_argument("kernel truncation must be finite and > 0, got " +
                                  std::to_string(truncation));
  }

  /// Sigma in voxels along each axis for the given grid.
  std::array<double, 3> axis_sigmas(const VolumeGeometry& g) const {
    if (anisotropy == AnisotropyMode::voxel_isotropic)
      return {sigma_inplane, sigma_inplane, sigma_inplane};
    return {sigma_inplane, sigma_inplane * g.spacing[0] / g.spacing[1],
            sigma_inplane * g.spacing[0] / g.spacing[2]};
  }
};

/// Sampled Gaussian taps w[k] for offsets k = -r..r, r = floor(truncation * sigma),
/// renormalized to sum 1. Index r holds the centre tap.
template <typename Scalar = double>
std::vector<Scalar> gaussian_kernel(double sigma, double truncation) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_kernel: sigma must be > 0");
  const auto radius = static_cast<std::int64_t>(std::floor(truncation * sigma));
  std::vector<double> taps(static_cast<std::size_t>(2 * radius + 1));
  double sum = 0.0;
  for (std::int64_t k = -radius; k <= radius; ++k) {
    const double w = std::exp(-0.5 * static_cast<double>(k * k) / (sigma * sigma));
    taps[static_cast<std::size_t>(k + radius)] = w;
    sum += w;
  }
  std::vector<Scalar> out(taps.size());
  for (std::size_t i = 0; i < taps.size(); ++i) out[i] = static_cast<Scalar>(taps[i] / sum);
  return out;
}

/// Half-sample symmetric reflection (d c b a | a b c d | d c b a) of an
/// arbitrary index into [0, n).
inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * n;
  std::int64_t m = i % period;
  if (m < 0) m += period;
  return m < n ? m : period - 1 - m;
}

namespace detail {

enum class AxisBackend { automatic, dense_operator, direct };

/// n x n matrix applying the reflect-padded 1D convolution to a line.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> line_operator(
    const std::vector<Scalar>& taps, std::int64_t n) {
  const auto radius = static_cast<std::int64_t>(taps.size() / 2);
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> op =
      Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(n, n);
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = -radius; k <= radius; ++k)
      op(i, reflect_index(i + k, n)) += taps[static_cast<std::size_t>(k + radius)];
  return op;
}

template <typename Scalar>
void convolve_axis_direct(const Scalar* in, Scalar* out, const VolumeGeometry& g, int axis,
                          const std::vector<Scalar>& taps) {
  const auto& s = g.shape;
  const std::int64_t n = s[axis];
  const std::int64_t stride = axis == 0 ? 1 : (axis == 1 ? s[0] : s[0] * s[1]);
  const auto radius = static_cast<std::int64_t>(taps.size() / 2);

  // Precompute reflected source indices per (position, tap).
  std::vector<std::int64_t> src(static_cast<std::size_t>(n) * taps.size());
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t k = -radius; k <= radius; ++k)
      src[static_cast<std::size_t>(i) * taps.size() + static_cast<std::size_t>(k + radius)] =
          reflect_index(i + k, n) * stride;

  const std::int64_t outer = g.voxel_count() / n;
  for (std::int64_t line = 0; line < outer; ++line) {
    std::int64_t base;
    if (axis == 0) {
      base = line * s[0];
    } else if (axis == 1) {
      base = (line % s[0]) + (line / s[0]) * s[0] * s[1];
    } else {
      base = line;
    }
    for (std::int64_t i = 0; i < n; ++i) {
      const std::int64_t* idx = &src[static_cast<std::size_t>(i) * taps.size()];
      Scalar acc(0);
      for (std::size_t t = 0; t < taps.size(); ++t) acc += taps[t] * in[base + idx[t]];
      out[base + i * stride] = acc;
    }
  }
}

template <typename Scalar>
void convolve_axis_dense(const Scalar* in, Scalar* out, const VolumeGeometry& g, int axis,
                         const std::vector<Scalar>& taps) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const auto& s = g.shape;
  const Mat op = line_operator(taps, s[axis]);
  if (axis == 0) {
    Eigen::Map<const Mat> src(in, s[0], s[1] * s[2]);
    Eigen::Map<Mat> dst(out, s[0], s[1] * s[2]);
    dst.noalias() = op * src;
  } else if (axis == 1) {
    for (std::int64_t z = 0; z < s[2]; ++z) {
      Eigen::Map<const Mat> src(in + z * s[0] * s[1], s[0], s[1]);
      Eigen::Map<Mat> dst(out + z * s[0] * s[1], s[0], s[1]);
      dst.noalias() = src * op.transpose();
    }
  } else {
    Eigen::Map<const Mat> src(in, s[0] * s[1], s[2]);
    Eigen::Map<Mat> dst(out, s[0] * s[1], s[2]);
    dst.noalias() = src * op.transpose();
  }
}

template <typename Scalar>
void convolve_axis(const Scalar* in, Scalar* out, const VolumeGeometry& g, int axis,
                   const std::vector<Scalar>& taps, AxisBackend backend) {
  const std::int64_t n = g.shape[axis];
  if (backend == AxisBackend::automatic)
    backend = static_cast<std::int64_t>(taps.size()) * 4 >= n ? AxisBackend::dense_operator
                                                              : AxisBackend::direct;
  if (backend == AxisBackend::dense_operator)
    convolve_axis_dense(in, out, g, axis, taps);
  else
    convolve_axis_direct(in, out, g, axis, taps);
}

template <typename Scalar>
Volume<Scalar> gaussian_smooth(const Volume<Scalar>& vol, const SmoothingSpec& spec,
                               AxisBackend backend) {
  spec.validate();
  if (!vol.values().allFinite())
    throw std::invalid_argument("gaussian_smooth: input contains non-finite values");
  const auto& g = vol.geometry();
  const auto sigmas = spec.axis_sigmas(g);
  Volume<Scalar> a = vol;
  Volume<Scalar> b(g);
  for (int axis = 0; axis < 3; ++axis) {
    const auto taps = gaussian_kernel<Scalar>(sigmas[axis], spec.truncation);
    if (taps.size() == 1) continue;  // identity kernel
    convolve_axis(a.data(), b.data(), g, axis, taps, backend);
    std::swap(a, b);
  }
  return a;
}

}  // namespace detail

/// Separable Gaussian smoothing with reflect padding: one sampled,
/// sum-normalized 1D kernel per axis.
template <typename Scalar>
Volume<Scalar> gaussian_smooth(const Volume<Scalar>& vol, const SmoothingSpec& spec) {
  return detail::gaussian_smooth(vol, spec, detail::AxisBackend::automatic);
}

}  // namespace anatomy_warp
