#include "doctest.h"

#include "anatomy_warp/exchange.hpp"
#include "anatomy_warp/policy.hpp"
#include "../support/oracles.hpp"
#include "../support/phantom.hpp"

#include <thread>

using namespace anatomy_warp;
namespace ex = anatomy_warp::exchange;

namespace {

struct Buffers {
  ex::ArrayShape shape;
  std::array<double, 3> spacing;
  std::vector<float> image;
  std::vector<std::uint16_t> lesions, organs;
};

Buffers to_buffers(const TrainingSample<float>& s) {
  Buffers b;
  b.shape = {std::int64_t(s.image.channel_count()), s.geometry().shape};
  b.spacing = s.geometry().spacing;
  b.image.resize(std::size_t(b.shape.channels * b.shape.voxels()));
  for (std::int64_t c = 0; c < b.shape.channels; ++c)
    ex::from_volume<float>(s.image.channel(std::size_t(c)), c, b.shape, b.image);
  const ex::ArrayShape one{1, b.shape.spatial};
  b.lesions.resize(std::size_t(one.voxels()));
  b.organs.resize(std::size_t(one.voxels()));
  ex::from_volume<std::uint16_t>(s.lesions.cast<std::uint16_t>(), 0, one, b.lesions);
  ex::from_volume<std::uint16_t>(s.organs.cast<std::uint16_t>(), 0, one, b.organs);
  return b;
}

const char* small_config =
    R"({"smoothing": {"sigma_inplane": 3}, "probability": 1.0,
        "organs": [{"label": 1, "c_max": 60}, {"label": 2, "c_max": 30}]})";

}  // namespace

TEST_SUITE("exchange") {
  TEST_CASE("layout is C-order with z fastest") {
    const ex::ArrayShape shape{2, {2, 3, 4}};
    std::vector<double> buf(48);
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = double(i);
    const auto v = ex::to_volume<double>(buf, 1, shape, {1, 1, 1});
    CHECK(v(0, 0, 1) == 24 + 1);
    CHECK(v(0, 1, 0) == 24 + 4);
    CHECK(v(1, 0, 0) == 24 + 12);
    std::vector<double> back(48, -1);
    ex::from_volume<double>(v, 1, shape, back);
    for (std::size_t i = 24; i < 48; ++i) CHECK(back[i] == buf[i]);
  }

  TEST_CASE("augment on buffers equals the core path") {
    const VolumeGeometry g({32, 30, 10}, {0.5, 0.5, 1.5});
    const auto s = phantom::sample(g);
    const auto b = to_buffers(s);
    const auto rc = parse_config_string(small_config);
    for (std::uint64_t seed : {0ULL, 7ULL, 99ULL}) {
      const auto out = ex::augment(b.image, b.lesions, b.organs, b.shape, b.spacing, small_config, seed);
      Rng rng(seed);
      const auto ref = augment(s, rc.augmentation, rng);
      const auto ref_b = to_buffers(ref.sample);
      CHECK(out.applied == ref.draw.applied);
      CHECK(std::memcmp(out.image.data(), ref_b.image.data(), out.image.size() * sizeof(float)) == 0);
      CHECK(out.lesions == ref_b.lesions);
      CHECK(out.organs == ref_b.organs);
      REQUIRE(out.amplitudes.size() == ref.draw.amplitudes.size());
      for (std::size_t k = 0; k < out.amplitudes.size(); ++k)
        CHECK(out.amplitudes[k].amplitude == ref.draw.amplitudes[k].amplitude);
    }
  }

  TEST_CASE("probability 0 returns the input unchanged") {
    const VolumeGeometry g({16, 16, 6}, {1, 1, 1});
    const auto b = to_buffers(phantom::sample(g));
    const auto out = ex::augment(b.image, b.lesions, b.organs, b.shape, b.spacing, R"({"probability": 0})", 3);
    CHECK_FALSE(out.applied);
    CHECK(std::memcmp(out.image.data(), b.image.data(), b.image.size() * sizeof(float)) == 0);
    CHECK(out.organs == b.organs);
  }

  TEST_CASE("field and warp entry points") {
    const VolumeGeometry g({20, 20, 8}, {1, 1, 1});
    const auto s = phantom::sample(g, 1);
    const auto b = to_buffers(s);
    const std::vector<OrganAmplitude> amps{{1, 50.0}};
    const auto field = ex::anatomy_field(b.organs, g.shape, g.spacing, amps, small_config);
    REQUIRE(field.size() == std::size_t(3 * b.shape.voxels()));
    const auto ref = anatomy_field<double>(s.organs, amps, SmoothingSpec{3});
    const ex::ArrayShape f3{3, g.shape};
    for (int a = 0; a < 3; ++a)
      CHECK(ex::to_volume<double>(field, a, f3, g.spacing).values().isApprox(ref.component(a)));

    const auto warped = ex::warp(b.image, field, b.shape, "{}");
    const auto ref_img = warp_image(s.image, ref);
    std::vector<float> ref_buf(warped.size());
    ex::from_volume<float>(ref_img.channel(0), 0, b.shape, ref_buf);
    CHECK(warped == ref_buf);

    const std::vector<double> zero(field.size(), 0.0);
    CHECK(ex::warp(b.image, zero, b.shape, "{}") == b.image);
  }

  TEST_CASE("size mismatches and bad configs are rejected") {
    const VolumeGeometry g({8, 8, 4}, {1, 1, 1});
    auto b = to_buffers(phantom::sample(g));
    b.organs.pop_back();
    CHECK_THROWS_AS(ex::augment(b.image, b.lesions, b.organs, b.shape, b.spacing, "{}", 0),
                    std::invalid_argument);
    b = to_buffers(phantom::sample(g));
    CHECK_THROWS_AS(ex::augment(b.image, b.lesions, b.organs, b.shape, b.spacing, R"({"x":1})", 0),
                    ConfigError);
  }

  TEST_CASE("concurrent calls give the same results as sequential ones") {
    const VolumeGeometry g({24, 24, 8}, {0.5, 0.5, 1.5});
    const auto b = to_buffers(phantom::sample(g));
    constexpr int threads = 8, per_thread = 6;
    auto checksum = [](const ex::AugmentedArrays& a) {
      std::uint64_t h = 1469598103934665603ULL;
      auto mix = [&](const void* p, std::size_t n) {
        auto* c = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) h = (h ^ c[i]) * 1099511628211ULL;
      };
      mix(a.image.data(), a.image.size() * sizeof(float));
      mix(a.organs.data(), a.organs.size() * 2);
      mix(a.lesions.data(), a.lesions.size() * 2);
      return h;
    };
    std::vector<std::uint64_t> seq(threads * per_thread), par(threads * per_thread);
    for (int i = 0; i < threads * per_thread; ++i)
      seq[i] = checksum(ex::augment(b.image, b.lesions, b.organs, b.shape, b.spacing, small_config, i));
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t)
      pool.emplace_back([&, t] {
        for (int k = 0; k < per_thread; ++k) {
          const int i = t * per_thread + k;
          par[i] = checksum(ex::augment(b.image, b.lesions, b.organs, b.shape, b.spacing, small_config, i));
        }
      });
    for (auto& th : pool) th.join();
    CHECK(seq == par);
  }
}
