#pragma once

#include <cstdint>

#include "rwkv/model.hpp"

namespace rwkv {

struct InitSpec {
  std::uint64_t seed = 0;
  double embed_scale = 1e-4;  // half-width of the uniform embedding init
  double gain_out = 2.0;      // stddev of the two non-zero projection inits
};

// Depth-aware initialization: interpolation factors and decays follow
// per-channel power curves in the layer index, most projections start at
// exactly zero (so every residual block is the identity map), and the
// embedding starts uniformly small. Deterministic in (cfg, spec).
Parameters init_model(const ModelConfig& cfg, const InitSpec& spec);

// N(0, 0.02) embedding, the conventional-init comparison arm used by the
// embedding-initialization ablation.
Matrix init_embedding_baseline(const ModelConfig& cfg, std::uint64_t seed);

}  // namespace rwkv
