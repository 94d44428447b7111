// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "unitar/net.hpp"
#include "unitar/units.hpp"

namespace unitar {

/// One-step causal generator: per unit, a single forward pass maps noise
/// plus the generated prefix to the unit's latent payload.
struct GenConfig {
  UnitScheme scheme;
  uint32_t channels = 1;
  uint32_t d_model = 16;
  uint32_t n_layers = 2;
  uint32_t n_heads = 4;
  uint32_t tokens_per_voxel = 1;  // fixed at 1
  uint32_t max_tokens = 4096;
  uint32_t max_unit_tokens = 64;
  uint64_t param_seed = 0;
};

/// Desk-scale guard: generators above this parameter count are rejected.
constexpr size_t kMaxGeneratorParams = 50000;

NetConfig generator_net_config(const GenConfig& cfg);

/// Deterministic init from cfg.param_seed; enforces head divisibility,
/// tokens_per_voxel == 1, and the parameter cap.
NetParams init_params(const GenConfig& cfg);

/// Per-unit noise: one standard-normal value per payload element.
struct NoiseDraw {
  uint64_t seed = 0;
  std::vector<float> z;
};
NoiseDraw draw_unit_noise(Rng& rng, size_t payload_len);

/// Token bookkeeping for one scheme instance: layout plus per-token global
/// unit index and intra-unit offset.
struct TokenPlan {
  UnitLayout layout;
  TokenMeta meta;
  uint32_t channels = 0;
};
TokenPlan token_plan(const UnitScheme& s, uint32_t t, uint32_t h, uint32_t w,
                     uint32_t c, uint64_t unit_index_base = 0);

/// One autoregressive step over a full-sequence buffer. `slab` carries one
/// input row per token (payloads for generated units, noise for the target
/// unit; slots for units after the target may hold anything, since the forward
/// mask keeps them out of the arithmetic). Returns the target unit's payload.
std::vector<float> forward_step(const GenConfig& cfg, const NetParams& params,
                                const TokenPlan& plan,
                                std::span<const float> slab,
                                const AttentionMask& mask, uint32_t target_unit,
                                NetTape* tape = nullptr);

/// Exact parameter gradient of <upstream, forward_step(...)> where upstream
/// covers the target unit's payload.
std::vector<double> backward_step(const GenConfig& cfg, const NetParams& params,
                                  const TokenPlan& plan,
                                  std::span<const float> slab,
                                  const AttentionMask& mask,
                                  uint32_t target_unit, const NetTape& tape,
                                  std::span<const double> upstream_payload);

/// Roll the generator over all units of the scheme, feeding each generated
/// unit back as context. Deterministic given (params, rng).
UnitSequence generate_sequence(const GenConfig& cfg, const NetParams& params,
                               uint32_t t, uint32_t h, uint32_t w, uint32_t c,
                               Rng& rng);

}  // namespace unitar
