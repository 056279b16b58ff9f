#include "anatomy_warp/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include <Eigen/Dense>

namespace anatomy_warp {

void AugmentationConfig::validate() const {
  smoothing.validate();
  if (!(probability >= 0.0 && probability <= 1.0))
    throw std::invalid_argument("probability must lie in [0, 1], got " + std::to_string(probability));
  std::set<std::int32_t> labels;
  for (const auto& o : organs) {
    if (o.label < 1) throw std::invalid_argument("organ label must be >= 1");
    if (!(o.c_max > 0.0) || !std::isfinite(o.c_max))
      throw std::invalid_argument("c_max for organ " + std::to_string(o.label) + " must be > 0");
    if (!labels.insert(o.label).second)
      throw std::invalid_argument("duplicate organ label " + std::to_string(o.label));
    if (distribution == AmplitudeDistribution::discrete_levels &&
        std::none_of(discrete_levels.begin(), discrete_levels.end(),
                     [&](double l) { return l <= o.c_max; }))
      throw std::invalid_argument("no discrete amplitude level <= c_max for organ " +
                                  std::to_string(o.label));
  }
  for (double l : discrete_levels)
    if (!(l > 0.0) || !std::isfinite(l))
      throw std::invalid_argument("discrete amplitude levels must be finite and > 0");
  if (scheme == AugmentationScheme::random_elastic) {
    if (!elastic) throw std::invalid_argument("random_elastic scheme requires elastic parameters");
  }
  if (elastic) {
    if (!(elastic->alpha >= 0.0) || !std::isfinite(elastic->alpha))
      throw std::invalid_argument("elastic alpha must be finite and >= 0");
    if (!(elastic->sigma > 0.0) || !std::isfinite(elastic->sigma))
      throw std::invalid_argument("elastic sigma must be finite and > 0");
  }
  if (!(crop.axial_mm >= 0.0) || !(crop.inplane_mm >= 0.0))
    throw std::invalid_argument("crop offsets must be >= 0");
  if (prostate_label < 1) throw std::invalid_argument("prostate label must be >= 1");
}

AmplitudeDraw sample_amplitudes(const AugmentationConfig& config, Rng& rng) {
  AmplitudeDraw draw;
  // One Bernoulli gate per sample, then independent per-organ draws.
  draw.applied = uniform01(rng) < config.probability;
  if (!draw.applied || config.scheme != AugmentationScheme::anatomy_informed) return draw;

  for (const auto& organ : config.organs) {
    double c;
    if (config.distribution == AmplitudeDistribution::continuous_uniform) {
      c = uniform(rng, -organ.c_max, organ.c_max);
    } else {
      std::vector<double> levels;
      for (double l : config.discrete_levels)
        if (l <= organ.c_max) levels.push_back(l);
      const auto pick = uniform_index(rng, 2 * levels.size());
      c = levels[pick / 2] * (pick % 2 == 0 ? 1.0 : -1.0);
    }
    draw.amplitudes.push_back({organ.label, c});
  }
  return draw;
}

VectorField<double> random_elastic_field(const VolumeGeometry& geometry, double alpha,
                                         double sigma_e, Rng& rng, AnisotropyMode anisotropy) {
  if (!(alpha >= 0.0)) throw std::invalid_argument("elastic alpha must be >= 0");
  if (!(sigma_e > 0.0)) throw std::invalid_argument("elastic sigma must be > 0");
  VectorField<double> field(geometry);
  if (alpha == 0.0) return field;

  const SmoothingSpec spec{sigma_e, anisotropy, 4.0};
  for (int a = 0; a < 3; ++a) {
    ScalarVolume noise(geometry);
    for (std::int64_t i = 0; i < noise.size(); ++i) noise[i] = uniform(rng, -alpha, alpha);
    field.component(a) = gaussian_smooth(noise, spec).values();
  }
  return field;
}

std::int64_t mm_to_voxels_outward(double mm, double spacing) {
  // Tolerance keeps exact ratios such as 11.25 / 0.3125 from rounding up.
  const double v = mm / spacing;
  return static_cast<std::int64_t>(std::ceil(v - 1e-9 * std::max(1.0, v)));
}

CropBox compute_crop_box(const LabelVolume& organs, std::int32_t prostate_label,
                         std::span<const std::int32_t> adjacent_labels, const CropOffsets& offsets) {
  const auto& g = organs.geometry();
  constexpr auto big = std::numeric_limits<std::int64_t>::max();
  std::array<std::int64_t, 3> plo{big, big, big}, phi{-1, -1, -1};  // prostate
  std::array<std::int64_t, 2> ulo{big, big}, uhi{-1, -1};             // in-plane union

  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x) {
        const auto l = organs(x, y, z);
        if (l == 0) continue;
        const bool prostate = l == prostate_label;
        const bool adjacent =
            std::find(adjacent_labels.begin(), adjacent_labels.end(), l) != adjacent_labels.end();
        if (prostate) {
          const std::int64_t p[3] = {x, y, z};
          for (int a = 0; a < 3; ++a) {
            plo[a] = std::min(plo[a], p[a]);
            phi[a] = std::max(phi[a], p[a]);
          }
        }
        if (prostate || adjacent) {
          ulo[0] = std::min(ulo[0], x);
          uhi[0] = std::max(uhi[0], x);
          ulo[1] = std::min(ulo[1], y);
          uhi[1] = std::max(uhi[1], y);
        }
      }
  if (phi[0] < 0)
    throw std::invalid_argument("crop_region: prostate label " + std::to_string(prostate_label) +
                                " not present in organ segmentation");

  CropBox box;
  for (int a = 0; a < 2; ++a) {
    const auto pad = mm_to_voxels_outward(offsets.inplane_mm, g.spacing[a]);
    box.lo[a] = std::max<std::int64_t>(0, ulo[a] - pad);
    box.hi[a] = std::min<std::int64_t>(g.shape[a], uhi[a] + pad + 1);
  }
  const auto zpad = mm_to_voxels_outward(offsets.axial_mm, g.spacing[2]);
  box.lo[2] = std::max<std::int64_t>(0, plo[2] - zpad);
  box.hi[2] = std::min<std::int64_t>(g.shape[2], phi[2] + zpad + 1);
  return box;
}

FoldoverReport foldover_diagnostic(const VectorField<double>& field) {
  const auto& g = field.geometry();
  std::array<VectorField<double>, 3> grads;
  for (int c = 0; c < 3; ++c)
    grads[c] = spatial_gradient(ScalarVolume(g, field.component(c)));

  FoldoverReport report;
  report.min_determinant = std::numeric_limits<double>::infinity();
  const std::int64_t n = g.voxel_count();
  for (std::int64_t i = 0; i < n; ++i) {
    Eigen::Matrix3d jac = Eigen::Matrix3d::Identity();
    for (int c = 0; c < 3; ++c)
      for (int a = 0; a < 3; ++a) jac(c, a) += grads[c].component(a)[i];
    const double det = jac.determinant();
    report.min_determinant = std::min(report.min_determinant, det);
    if (det <= 0.0) ++report.count;
  }
  report.fraction = static_cast<double>(report.count) / static_cast<double>(n);
  return report;
}

}  // namespace anatomy_warp
