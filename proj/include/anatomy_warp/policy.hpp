#pragma once

#include "anatomy_warp/field.hpp"
#include "anatomy_warp/rng.hpp"
#include "anatomy_warp/smoothing.hpp"
#include "anatomy_warp/volume.hpp"
#include "anatomy_warp/warp.hpp"

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace anatomy_warp {

struct OrganAmplitudeSpec {
  std::int32_t label = 0;
  double c_max = 0.0;
  std::string name;
};

enum class AmplitudeDistribution {
  /// C ~ U[-c_max, +c_max]
  continuous_uniform,
  /// C drawn uniformly from {+-l : l in discrete_levels, l <= c_max}
  discrete_levels,
};

enum class AugmentationScheme { anatomy_informed, random_elastic };

struct ElasticBaseline {
  double alpha = 0.0;  // noise amplitude, voxels
  double sigma = 0.0;  // smoothing sigma, voxels in-plane
};

struct CropOffsets {
  double axial_mm = 9.0;     // through-plane margin around the prostate
  double inplane_mm = 11.25;  // in-plane margin around prostate, rectum and bladder
};

struct AugmentationConfig {
  std::vector<OrganAmplitudeSpec> organs{{1, 1200.0, "rectum"}, {2, 600.0, "bladder"}};
  SmoothingSpec smoothing{};
  double probability = 0.2;
  AmplitudeDistribution distribution = AmplitudeDistribution::continuous_uniform;
  std::vector<double> discrete_levels{300.0, 600.0, 900.0, 1200.0, 1500.0};
  AugmentationScheme scheme = AugmentationScheme::anatomy_informed;
  std::optional<ElasticBaseline> elastic;
  CropOffsets crop{};
  std::int32_t prostate_label = 3;
  InterpolationMode image_interpolation = InterpolationMode::trilinear;
  BoundaryMode boundary{};
  std::uint64_t seed = 0;

  void validate() const;
};

/// Result of the per-sample Bernoulli gate plus amplitude draws.
struct AmplitudeDraw {
  bool applied = false;
  std::vector<OrganAmplitude> amplitudes;
};

AmplitudeDraw sample_amplitudes(const AugmentationConfig& config, Rng& rng);

/// Uniform noise in [-alpha, alpha] per component and voxel, each component
/// then smoothed with sigma_e (same anisotropy handling as the organ field).
VectorField<double> random_elastic_field(const VolumeGeometry& geometry, double alpha,
                                         double sigma_e, Rng& rng,
                                         AnisotropyMode anisotropy = AnisotropyMode::physical_isotropic);

template <typename Scalar>
struct TrainingSample {
  MultiChannelVolume<Scalar> image;
  LabelVolume lesions;
  LabelVolume organs;

  const VolumeGeometry& geometry() const { return image.geometry(); }
  void validate() const {
    require_same_geometry(image.geometry(), lesions.geometry(), "training sample lesions");
    require_same_geometry(image.geometry(), organs.geometry(), "training sample organs");
  }
  friend bool operator==(const TrainingSample&, const TrainingSample&) = default;
};

/// Half-open voxel box [lo, hi) per axis.
struct CropBox {
  std::array<std::int64_t, 3> lo{0, 0, 0};
  std::array<std::int64_t, 3> hi{0, 0, 0};
  friend bool operator==(const CropBox&, const CropBox&) = default;
};

/// Margin in voxels covering at least `mm` millimetres.
std::int64_t mm_to_voxels_outward(double mm, double spacing);

/// Prostate through-plane extent padded by the axial margin; in-plane union
/// extent of prostate and adjacent organs padded by the in-plane margin;
/// clamped to the grid.
CropBox compute_crop_box(const LabelVolume& organs, std::int32_t prostate_label,
                         std::span<const std::int32_t> adjacent_labels, const CropOffsets& offsets);

template <typename T>
Volume<T> crop_volume(const Volume<T>& vol, const CropBox& box) {
  VolumeGeometry g{{box.hi[0] - box.lo[0], box.hi[1] - box.lo[1], box.hi[2] - box.lo[2]},
                   vol.geometry().spacing};
  Volume<T> out(g);
  for (std::int64_t z = 0; z < g.shape[2]; ++z)
    for (std::int64_t y = 0; y < g.shape[1]; ++y)
      for (std::int64_t x = 0; x < g.shape[0]; ++x)
        out(x, y, z) = vol(x + box.lo[0], y + box.lo[1], z + box.lo[2]);
  return out;
}

template <typename Scalar>
TrainingSample<Scalar> crop_region(const TrainingSample<Scalar>& sample, std::int32_t prostate_label,
                                   std::span<const std::int32_t> adjacent_labels,
                                   const CropOffsets& offsets, CropBox* box_out = nullptr) {
  sample.validate();
  const CropBox box = compute_crop_box(sample.organs, prostate_label, adjacent_labels, offsets);
  if (box_out) *box_out = box;
  std::vector<Volume<Scalar>> channels;
  for (const auto& c : sample.image) channels.push_back(crop_volume(c, box));
  return {MultiChannelVolume<Scalar>(std::move(channels)), crop_volume(sample.lesions, box),
          crop_volume(sample.organs, box)};
}

template <typename Scalar>
struct AugmentResult {
  TrainingSample<Scalar> sample;
  AmplitudeDraw draw;
  /// The applied field; empty on the skip path.
  std::optional<VectorField<double>> field;
};

/// Warp image and both label maps with one field instance.
template <typename Scalar>
TrainingSample<Scalar> apply_field(const TrainingSample<Scalar>& sample,
                                   const VectorField<double>& field, const AugmentationConfig& config) {
  return {warp_image(sample.image, field, config.image_interpolation, config.boundary),
          warp_labels(sample.lesions, field), warp_labels(sample.organs, field)};
}

/// Deform with explicitly given amplitudes (no gate, no draws).
template <typename Scalar>
AugmentResult<Scalar> augment_with_amplitudes(const TrainingSample<Scalar>& sample,
                                              std::vector<OrganAmplitude> amplitudes,
                                              const AugmentationConfig& config) {
  sample.validate();
  auto field = anatomy_field<double>(sample.organs, amplitudes, config.smoothing);
  auto warped = apply_field(sample, field, config);
  return {std::move(warped), {true, std::move(amplitudes)}, std::move(field)};
}

/// One on-the-fly augmentation step: gate, draw, build field, warp.
template <typename Scalar>
AugmentResult<Scalar> augment(const TrainingSample<Scalar>& sample, const AugmentationConfig& config,
                              Rng& rng) {
  config.validate();
  sample.validate();
  AmplitudeDraw draw = sample_amplitudes(config, rng);
  if (!draw.applied) return {sample, std::move(draw), std::nullopt};

  if (config.scheme == AugmentationScheme::random_elastic) {
    auto field = random_elastic_field(sample.geometry(), config.elastic->alpha,
                                      config.elastic->sigma, rng, config.smoothing.anisotropy);
    auto warped = apply_field(sample, field, config);
    return {std::move(warped), std::move(draw), std::move(field)};
  }
  return augment_with_amplitudes(sample, std::move(draw.amplitudes), config);
}

struct FoldoverReport {
  double fraction = 0.0;       // share of voxels with det J <= 0
  std::int64_t count = 0;
  double min_determinant = 1.0;
};

/// Jacobian determinant of x -> x + V(x) from finite differences.
FoldoverReport foldover_diagnostic(const VectorField<double>& field);

}  // namespace anatomy_warp
