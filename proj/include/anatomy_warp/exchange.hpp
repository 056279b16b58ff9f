#pragma once

// Array-level entry points for host pipelines (the Python binding wraps
// these). Buffers are C-ordered (channel, x, y, z): z varies fastest, as in
// a contiguous numpy array of shape (c, x, y, z). Each call copies once into
// the core layout and once back out.

#include "anatomy_warp/config.hpp"
#include "anatomy_warp/volume.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace anatomy_warp::exchange {

struct ArrayShape {
  std::int64_t channels = 1;
  std::array<std::int64_t, 3> spatial{1, 1, 1};

  std::int64_t voxels() const { return spatial[0] * spatial[1] * spatial[2]; }
};

struct AugmentedArrays {
  std::vector<float> image;
  std::vector<std::uint16_t> lesions;
  std::vector<std::uint16_t> organs;
  bool applied = false;
  std::vector<OrganAmplitude> amplitudes;
};

/// Core `augment` on raw buffers; `config_json` goes through the strict
/// config parser. Bit-identical to the library path for the same seed.
AugmentedArrays augment(std::span<const float> image, std::span<const std::uint16_t> lesions,
                        std::span<const std::uint16_t> organs, const ArrayShape& shape,
                        const std::array<double, 3>& spacing, const std::string& config_json,
                        std::uint64_t seed);

/// Anatomy field as a (3, x, y, z) buffer.
std::vector<double> anatomy_field(std::span<const std::uint16_t> organs,
                                  const std::array<std::int64_t, 3>& shape,
                                  const std::array<double, 3>& spacing,
                                  std::span<const OrganAmplitude> amplitudes,
                                  const std::string& config_json);

/// Backward warp of a (c, x, y, z) image with a (3, x, y, z) field.
std::vector<float> warp(std::span<const float> image, std::span<const double> field,
                        const ArrayShape& shape, const std::string& config_json);

/// Layout conversion helpers.
template <typename T>
Volume<T> to_volume(std::span<const T> buffer, std::int64_t channel, const ArrayShape& shape,
                    const std::array<double, 3>& spacing);
template <typename T>
void from_volume(const Volume<T>& vol, std::int64_t channel, const ArrayShape& shape,
                 std::span<T> buffer);

}  // namespace anatomy_warp::exchange
