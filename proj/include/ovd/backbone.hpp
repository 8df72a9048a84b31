#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "ovd/rng.hpp"
#include "ovd/tensor.hpp"

namespace ovd {

// One flattened feature map: tokens[t] is the C-vector for grid cell
// (t / grid_w, t % grid_w) at the given stride.
struct FeatureLevel {
  Tensor tokens;  // [grid_h * grid_w, C]
  std::int64_t grid_h = 0;
  std::int64_t grid_w = 0;
  std::int64_t stride = 0;
};

struct MultiScaleFeatures {
  std::vector<FeatureLevel> levels;  // strides 8, 16, 32
  std::int64_t channels = 0;

  std::int64_t total_tokens() const {
    std::int64_t n = 0;
    for (const auto& l : levels) n += l.tokens.rows();
    return n;
  }
};

// Patch-embedding stem weights for one scale.
struct PatchStem {
  Tensor w;     // [3*p*p, C]
  Tensor b;     // [1, C]
  Tensor ln_g;  // [1, C]
  Tensor ln_b;  // [1, C]
};

struct BackboneParams {
  std::array<PatchStem, 3> stems;  // patch sizes 8, 16, 32
  std::int64_t channels = 0;
};

inline constexpr std::array<std::int64_t, 3> kStrides = {8, 16, 32};

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weight matrix.
Tensor init_linear(Rng& rng, std::int64_t fan_in, std::int64_t fan_out);

BackboneParams init_backbone(std::int64_t channels, Rng& rng);

// Image-encoder stand-in: per scale, non-overlapping patch flatten, linear
// projection, pointwise nonlinearity, layer normalization. H and W must be
// divisible by 32.
MultiScaleFeatures encode_image(const Tensor& image, const BackboneParams& params);

}  // namespace ovd
