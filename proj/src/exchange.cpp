#include "anatomy_warp/exchange.hpp"

#include "anatomy_warp/field.hpp"
#include "anatomy_warp/policy.hpp"
#include "anatomy_warp/warp.hpp"

#include <stdexcept>

namespace anatomy_warp::exchange {
namespace {

void require_size(std::size_t got, std::int64_t want, const char* what) {
  if (static_cast<std::int64_t>(got) != want)
    throw std::invalid_argument(std::string(what) + ": buffer holds " + std::to_string(got) +
                                " elements, shape requires " + std::to_string(want));
}

LabelVolume labels_from(std::span<const std::uint16_t> buf, const ArrayShape& shape,
                        const std::array<double, 3>& spacing) {
  return to_volume<std::uint16_t>(buf, 0, shape, spacing).cast<std::int32_t>();
}

void labels_to(const LabelVolume& vol, const ArrayShape& shape, std::vector<std::uint16_t>& out) {
  out.resize(static_cast<std::size_t>(shape.voxels()));
  from_volume<std::uint16_t>(vol.cast<std::uint16_t>(), 0, shape, out);
}

}  // namespace

template <typename T>
Volume<T> to_volume(std::span<const T> buffer, std::int64_t channel, const ArrayShape& shape,
                    const std::array<double, 3>& spacing) {
  Volume<T> vol(VolumeGeometry(shape.spatial, spacing));
  const auto [nx, ny, nz] = shape.spatial;
  const std::int64_t base = channel * shape.voxels();
  for (std::int64_t x = 0; x < nx; ++x)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t z = 0; z < nz; ++z) vol(x, y, z) = buffer[base + (x * ny + y) * nz + z];
  return vol;
}

template <typename T>
void from_volume(const Volume<T>& vol, std::int64_t channel, const ArrayShape& shape,
                 std::span<T> buffer) {
  const auto [nx, ny, nz] = shape.spatial;
  const std::int64_t base = channel * shape.voxels();
  for (std::int64_t x = 0; x < nx; ++x)
    for (std::int64_t y = 0; y < ny; ++y)
      for (std::int64_t z = 0; z < nz; ++z) buffer[base + (x * ny + y) * nz + z] = vol(x, y, z);
}

template Volume<float> to_volume(std::span<const float>, std::int64_t, const ArrayShape&,
                                 const std::array<double, 3>&);
template Volume<double> to_volume(std::span<const double>, std::int64_t, const ArrayShape&,
                                  const std::array<double, 3>&);
template Volume<std::uint16_t> to_volume(std::span<const std::uint16_t>, std::int64_t,
                                         const ArrayShape&, const std::array<double, 3>&);
template void from_volume(const Volume<float>&, std::int64_t, const ArrayShape&, std::span<float>);
template void from_volume(const Volume<double>&, std::int64_t, const ArrayShape&, std::span<double>);
template void from_volume(const Volume<std::uint16_t>&, std::int64_t, const ArrayShape&,
                          std::span<std::uint16_t>);

AugmentedArrays augment(std::span<const float> image, std::span<const std::uint16_t> lesions,
                        std::span<const std::uint16_t> organs, const ArrayShape& shape,
                        const std::array<double, 3>& spacing, const std::string& config_json,
                        std::uint64_t seed) {
  if (shape.channels < 1) throw std::invalid_argument("augment: need >= 1 image channel");
  require_size(image.size(), shape.channels * shape.voxels(), "image");
  require_size(lesions.size(), shape.voxels(), "lesions");
  require_size(organs.size(), shape.voxels(), "organs");
  const RunConfig config = parse_config_string(config_json);

  std::vector<Volume<float>> channels;
  for (std::int64_t c = 0; c < shape.channels; ++c)
    channels.push_back(to_volume(image, c, shape, spacing));
  const TrainingSample<float> sample{MultiChannelVolume<float>(std::move(channels)),
                                     labels_from(lesions, shape, spacing),
                                     labels_from(organs, shape, spacing)};

  Rng rng(seed);
  const auto result = anatomy_warp::augment(sample, config.augmentation, rng);

  AugmentedArrays out;
  out.applied = result.draw.applied;
  out.amplitudes = result.draw.amplitudes;
  out.image.resize(image.size());
  for (std::int64_t c = 0; c < shape.channels; ++c)
    from_volume<float>(result.sample.image.channel(static_cast<std::size_t>(c)), c, shape, out.image);
  labels_to(result.sample.lesions, shape, out.lesions);
  labels_to(result.sample.organs, shape, out.organs);
  return out;
}

std::vector<double> anatomy_field(std::span<const std::uint16_t> organs,
                                  const std::array<std::int64_t, 3>& spatial,
                                  const std::array<double, 3>& spacing,
                                  std::span<const OrganAmplitude> amplitudes,
                                  const std::string& config_json) {
  const ArrayShape shape{1, spatial};
  require_size(organs.size(), shape.voxels(), "organs");
  const RunConfig config = parse_config_string(config_json);
  const auto field = anatomy_warp::anatomy_field<double>(labels_from(organs, shape, spacing),
                                                         amplitudes, config.augmentation.smoothing);
  const ArrayShape out_shape{3, spatial};
  std::vector<double> out(static_cast<std::size_t>(out_shape.channels * out_shape.voxels()));
  for (int a = 0; a < 3; ++a)
    from_volume<double>(Volume<double>(field.geometry(), field.component(a)), a, out_shape, out);
  return out;
}

std::vector<float> warp(std::span<const float> image, std::span<const double> field,
                        const ArrayShape& shape, const std::string& config_json) {
  require_size(image.size(), shape.channels * shape.voxels(), "image");
  require_size(field.size(), 3 * shape.voxels(), "field");
  const RunConfig config = parse_config_string(config_json);
  const std::array<double, 3> unit{1.0, 1.0, 1.0};
  const ArrayShape field_shape{3, shape.spatial};
  VectorField<double> vf(VolumeGeometry(shape.spatial, unit));
  for (int a = 0; a < 3; ++a) vf.component(a) = to_volume(field, a, field_shape, unit).values();

  std::vector<float> out(image.size());
  for (std::int64_t c = 0; c < shape.channels; ++c) {
    const auto warped = warp_volume(to_volume(image, c, shape, unit), vf,
                                    config.augmentation.image_interpolation,
                                    config.augmentation.boundary);
    from_volume<float>(warped, c, shape, out);
  }
  return out;
}

}  // namespace anatomy_warp::exchange
