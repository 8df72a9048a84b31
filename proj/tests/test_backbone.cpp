#include <doctest.h>

#include "ovd/backbone.hpp"
#include "ovd/error.hpp"
#include "ovd/gradcheck.hpp"

using namespace ovd;

TEST_CASE("stride arithmetic on a 64x64 input") {
  Rng rng(3);
  const auto params = init_backbone(16, rng);
  const Tensor img = Tensor::zeros({3, 64, 64});
  const auto feats = encode_image(img, params);
  REQUIRE(feats.levels.size() == 3);
  CHECK(feats.levels[0].grid_h == 8);
  CHECK(feats.levels[0].grid_w == 8);
  CHECK(feats.levels[1].grid_h == 4);
  CHECK(feats.levels[2].grid_h == 2);
  CHECK(feats.levels[0].tokens.rows() == 64);
  CHECK(feats.levels[0].tokens.cols() == 16);

  // token count identity
  const std::int64_t hw = 64 * 64;
  CHECK(feats.total_tokens() == hw / 64 + hw / 256 + hw / 1024);
}

TEST_CASE("indivisible image sizes are rejected") {
  Rng rng(3);
  const auto params = init_backbone(8, rng);
  CHECK_THROWS_AS(encode_image(Tensor::zeros({3, 40, 64}), params), ShapeError);
  CHECK_THROWS_AS(encode_image(Tensor::zeros({3, 64, 48}), params), ShapeError);
  CHECK_THROWS_AS(encode_image(Tensor::zeros({1, 64, 64}), params), ShapeError);
}

TEST_CASE("zero image with zero-bias parameters yields zero tokens") {
  Rng rng(5);
  auto params = init_backbone(8, rng);  // biases and ln offsets start at zero
  const auto feats = encode_image(Tensor::zeros({3, 32, 32}), params);
  for (const auto& level : feats.levels) {
    for (const double v : level.tokens.values()) CHECK(v == 0.0);
  }
}

TEST_CASE("translation by one stride-8 step translates F3 tokens") {
  Rng rng(7);
  const auto params = init_backbone(8, rng);
  Rng img_rng(11);
  std::vector<double> data(3 * 64 * 64);
  for (auto& v : data) v = img_rng.uniform(0.0, 1.0);
  // shifted copy: contents move 8 px right, wrapping the leftmost column block
  std::vector<double> shifted(data.size());
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < 64; ++y)
      for (std::int64_t x = 0; x < 64; ++x) {
        const std::int64_t sx = (x + 8) % 64;
        shifted[static_cast<std::size_t>(c * 64 * 64 + y * 64 + sx)] =
            data[static_cast<std::size_t>(c * 64 * 64 + y * 64 + x)];
      }
  const auto f1 = encode_image(Tensor::from({3, 64, 64}, data), params);
  const auto f2 = encode_image(Tensor::from({3, 64, 64}, shifted), params);
  const auto& t1 = f1.levels[0].tokens;
  const auto& t2 = f2.levels[0].tokens;
  for (std::int64_t gy = 0; gy < 8; ++gy)
    for (std::int64_t gx = 0; gx < 8; ++gx) {
      const std::int64_t src = gy * 8 + gx;
      const std::int64_t dst = gy * 8 + (gx + 1) % 8;
      for (std::int64_t ch = 0; ch < 8; ++ch) CHECK(t2.at(dst, ch) == t1.at(src, ch));
    }
}

TEST_CASE("pixel gradient matches finite differences") {
  Rng rng(13);
  BackboneParams params = init_backbone(4, rng);
  Rng img_rng(17);
  std::vector<double> data(3 * 32 * 32);
  for (auto& v : data) v = img_rng.uniform(0.0, 1.0);
  Tensor img = Tensor::from({3, 32, 32}, std::move(data));
  const double full_err = finite_diff_max_rel_err(
      [&params](const std::vector<Tensor>& l) {
        const auto feats = encode_image(l[0], params);
        Tensor acc = Tensor::scalar(0.0);
        for (const auto& level : feats.levels) acc = add(acc, sum(level.tokens));
        return acc;
      },
      {img});
  CHECK(full_err < 1e-4);
}
