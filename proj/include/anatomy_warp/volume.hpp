#pragma once

#include <Eigen/Core>

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace anatomy_warp {

/// Voxel grid shape plus physical spacing (mm per voxel) along x, y, z.
///
/// Voxels are stored with x varying fastest, matching the NIfTI on-disk
/// order, so a linear index is `x + nx * (y + ny * z)`.
struct VolumeGeometry {
  std::array<std::int64_t, 3> shape{1, 1, 1};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};

  VolumeGeometry() = default;
  VolumeGeometry(std::array<std::int64_t, 3> shape_, std::array<double, 3> spacing_)
      : shape(shape_), spacing(spacing_) {
    validate();
  }

  void validate() const {
    for (int a = 0; a < 3; ++a) {
      if (shape[a] < 1)
        throw std::invalid_argument("volume shape along axis " + std::to_string(a) +
                                    " must be >= 1, got " + std::to_string(shape[a]));
      if (!(spacing[a] > 0.0))
        throw std::invalid_argument("volume spacing along axis " + std::to_string(a) +
                                    " must be > 0, got " + std::to_string(spacing[a]));
    }
  }

  std::int64_t voxel_count() const { return shape[0] * shape[1] * shape[2]; }

  /// In-plane spacing over through-plane spacing (0.3125 / 3 for the
  /// default prostate protocol).
  double spacing_ratio() const { return spacing[0] / spacing[2]; }

  std::int64_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x + shape[0] * (y + shape[1] * z);
  }

  bool contains(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < shape[0] && y < shape[1] && z < shape[2];
  }

  std::string describe() const {
    return "(" + std::to_string(shape[0]) + ", " + std::to_string(shape[1]) + ", " +
           std::to_string(shape[2]) + ")";
  }

  friend bool operator==(const VolumeGeometry&, const VolumeGeometry&) = default;
};

inline void require_same_geometry(const VolumeGeometry& a, const VolumeGeometry& b,
                                  const std::string& what) {
  if (a != b)
    throw std::invalid_argument(what + ": geometry mismatch, " + a.describe() +
                                " vs " + b.describe());
}

/// A dense 3D grid of `Scalar` bound to a geometry.
template <typename Scalar>
class Volume {
 public:
  using ScalarType = Scalar;
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

  Volume() = default;
  explicit Volume(const VolumeGeometry& geometry, Scalar fill = Scalar(0))
      : geometry_(geometry), values_(Storage::Constant(geometry.voxel_count(), fill)) {
    geometry_.validate();
  }
  Volume(const VolumeGeometry& geometry, Storage values)
      : geometry_(geometry), values_(std::move(values)) {
    geometry_.validate();
    if (values_.size() != geometry_.voxel_count())
      throw std::invalid_argument("volume value count " + std::to_string(values_.size()) +
                                  " does not match shape " + geometry_.describe());
  }

  const VolumeGeometry& geometry() const { return geometry_; }
  const std::array<std::int64_t, 3>& shape() const { return geometry_.shape; }
  std::int64_t size() const { return values_.size(); }

  Storage& values() { return values_; }
  const Storage& values() const { return values_; }
  Scalar* data() { return values_.data(); }
  const Scalar* data() const { return values_.data(); }

  Scalar& operator()(std::int64_t x, std::int64_t y, std::int64_t z) {
    return values_[geometry_.index(x, y, z)];
  }
  Scalar operator()(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return values_[geometry_.index(x, y, z)];
  }
  Scalar& operator[](std::int64_t i) { return values_[i]; }
  Scalar operator[](std::int64_t i) const { return values_[i]; }

  template <typename Other>
  Volume<Other> cast() const {
    return Volume<Other>(geometry_, values_.template cast<Other>());
  }

  friend bool operator==(const Volume& a, const Volume& b) {
    return a.geometry_ == b.geometry_ && (a.values_ == b.values_).all();
  }

 private:
  VolumeGeometry geometry_;
  Storage values_;
};

using ScalarVolume = Volume<double>;
using LabelVolume = Volume<std::int32_t>;

/// Several intensity channels sharing one geometry. Channel-major in memory.
template <typename Scalar>
class MultiChannelVolume {
 public:
  MultiChannelVolume() = default;
  MultiChannelVolume(const VolumeGeometry& geometry, std::size_t channels)
      : geometry_(geometry), channels_(channels, Volume<Scalar>(geometry)) {}
  explicit MultiChannelVolume(std::vector<Volume<Scalar>> channels)
      : channels_(std::move(channels)) {
    if (channels_.empty()) throw std::invalid_argument("multi-channel volume needs >= 1 channel");
    geometry_ = channels_.front().geometry();
    for (const auto& c : channels_) require_same_geometry(geometry_, c.geometry(), "channel");
  }

  const VolumeGeometry& geometry() const { return geometry_; }
  std::size_t channel_count() const { return channels_.size(); }
  Volume<Scalar>& channel(std::size_t c) { return channels_.at(c); }
  const Volume<Scalar>& channel(std::size_t c) const { return channels_.at(c); }
  auto begin() const { return channels_.begin(); }
  auto end() const { return channels_.end(); }

  friend bool operator==(const MultiChannelVolume&, const MultiChannelVolume&) = default;

 private:
  VolumeGeometry geometry_;
  std::vector<Volume<Scalar>> channels_;
};

/// Per-voxel displacement in voxel units along each axis. A zero field is
/// the identity transform.
template <typename Scalar>
class VectorField {
 public:
  using Storage = typename Volume<Scalar>::Storage;

  VectorField() = default;
  explicit VectorField(const VolumeGeometry& geometry)
      : geometry_(geometry),
        components_{Storage::Zero(geometry.voxel_count()), Storage::Zero(geometry.voxel_count()),
                    Storage::Zero(geometry.voxel_count())} {
    geometry_.validate();
  }

  const VolumeGeometry& geometry() const { return geometry_; }
  Storage& component(int axis) { return components_.at(axis); }
  const Storage& component(int axis) const { return components_.at(axis); }

  Eigen::Matrix<Scalar, 3, 1> at(std::int64_t i) const {
    return {components_[0][i], components_[1][i], components_[2][i]};
  }

  /// Largest displacement magnitude over all voxels.
  Scalar max_norm() const {
    return (components_[0].square() + components_[1].square() + components_[2].square())
        .sqrt()
        .maxCoeff();
  }

  VectorField& operator+=(const VectorField& other) {
    require_same_geometry(geometry_, other.geometry_, "vector field sum");
    for (int a = 0; a < 3; ++a) components_[a] += other.components_[a];
    return *this;
  }
  VectorField& operator*=(Scalar s) {
    for (auto& c : components_) c *= s;
    return *this;
  }

  friend bool operator==(const VectorField& a, const VectorField& b) {
    if (a.geometry_ != b.geometry_) return false;
    for (int i = 0; i < 3; ++i)
      if (!(a.components_[i] == b.components_[i]).all()) return false;
    return true;
  }

 private:
  VolumeGeometry geometry_;
  std::array<Storage, 3> components_;
};

}  // namespace anatomy_warp
