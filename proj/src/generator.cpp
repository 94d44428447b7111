// SPDX-License-Identifier: Apache-2.0
#include "unitar/generator.hpp"

#include <stdexcept>
#include <string>

namespace unitar {

NetConfig generator_net_config(const GenConfig& cfg) {
  NetConfig net;
  net.in_dim = cfg.channels;
  net.out_dim = cfg.channels;
  net.d_model = cfg.d_model;
  net.n_layers = cfg.n_layers;
  net.n_heads = cfg.n_heads;
  net.max_unit_tokens = cfg.max_unit_tokens;
  net.param_seed = cfg.param_seed;
  return net;
}

NetParams init_params(const GenConfig& cfg) {
  if (cfg.tokens_per_voxel != 1)
    throw std::invalid_argument("tokens_per_voxel is fixed at 1");
  if (cfg.channels == 0)
    throw std::invalid_argument("channels must be >= 1");
  if (cfg.d_model % cfg.n_heads != 0)
    throw std::invalid_argument(
        "d_model=" + std::to_string(cfg.d_model) +
        " is not divisible by n_heads=" + std::to_string(cfg.n_heads));
  const NetConfig net = generator_net_config(cfg);
  const size_t count = net_param_count(net);
  if (count > kMaxGeneratorParams)
    throw std::invalid_argument(
        "config has " + std::to_string(count) +
        " parameters, above the desk-scale cap of " +
        std::to_string(kMaxGeneratorParams));
  return net_init(net);
}

NoiseDraw draw_unit_noise(Rng& rng, size_t payload_len) {
  NoiseDraw draw;
  draw.seed = rng.seed();
  draw.z.resize(payload_len);
  for (auto& v : draw.z) v = rng.normal_f32();
  return draw;
}

TokenPlan token_plan(const UnitScheme& s, uint32_t t, uint32_t h, uint32_t w,
                     uint32_t c, uint64_t unit_index_base) {
  if (c == 0) throw std::invalid_argument("channels must be >= 1");
  TokenPlan plan;
  plan.channels = c;
  plan.layout = layout_for(s, t, h, w, /*tokens_per_voxel=*/1);
  plan.meta.unit.reserve(plan.layout.total_tokens);
  plan.meta.offset.reserve(plan.layout.total_tokens);
  for (uint32_t u = 0; u < plan.layout.tokens_per_unit.size(); ++u) {
    for (uint32_t o = 0; o < plan.layout.tokens_per_unit[u]; ++o) {
      plan.meta.unit.push_back(unit_index_base + u);
      plan.meta.offset.push_back(o);
    }
  }
  return plan;
}

namespace {

void check_step_args(const GenConfig& cfg, const TokenPlan& plan,
                     std::span<const float> slab, const AttentionMask& mask,
                     uint32_t target_unit) {
  if (mask.dir != MaskDirection::Forward)
    throw std::invalid_argument("generator steps require a forward mask");
  const size_t n_units = plan.layout.tokens_per_unit.size();
  if (target_unit >= n_units)
    throw std::invalid_argument("target unit " + std::to_string(target_unit) +
                                " out of range (N=" + std::to_string(n_units) +
                                ")");
  if (slab.size() !=
      static_cast<size_t>(plan.layout.total_tokens) * plan.channels)
    throw std::invalid_argument(
        "slab length " + std::to_string(slab.size()) + " != total_tokens * c = " +
        std::to_string(static_cast<size_t>(plan.layout.total_tokens) *
                       plan.channels));
  if (mask.n_tokens != plan.layout.total_tokens)
    throw std::invalid_argument("mask token count does not match layout");
  if (plan.layout.total_tokens > cfg.max_tokens)
    throw std::invalid_argument("layout exceeds cfg.max_tokens");
}

std::vector<double> slab_to_double(std::span<const float> slab) {
  std::vector<double> x(slab.size());
  for (size_t i = 0; i < slab.size(); ++i) x[i] = slab[i];
  return x;
}

}  // namespace

std::vector<float> forward_step(const GenConfig& cfg, const NetParams& params,
                                const TokenPlan& plan,
                                std::span<const float> slab,
                                const AttentionMask& mask, uint32_t target_unit,
                                NetTape* tape) {
  check_step_args(cfg, plan, slab, mask, target_unit);
  const NetConfig net = generator_net_config(cfg);
  const std::vector<double> inputs = slab_to_double(slab);
  const std::vector<double> y =
      net_forward(net, params, inputs, plan.meta, mask, tape);

  const uint32_t begin = plan.layout.offsets[target_unit];
  const uint32_t end = plan.layout.offsets[target_unit + 1];
  std::vector<float> payload;
  payload.reserve(static_cast<size_t>(end - begin) * cfg.channels);
  for (uint32_t tok = begin; tok < end; ++tok)
    for (uint32_t ci = 0; ci < cfg.channels; ++ci)
      payload.push_back(
          static_cast<float>(y[static_cast<size_t>(tok) * cfg.channels + ci]));
  return payload;
}

std::vector<double> backward_step(const GenConfig& cfg, const NetParams& params,
                                  const TokenPlan& plan,
                                  std::span<const float> slab,
                                  const AttentionMask& mask,
                                  uint32_t target_unit, const NetTape& tape,
                                  std::span<const double> upstream_payload) {
  check_step_args(cfg, plan, slab, mask, target_unit);
  const uint32_t begin = plan.layout.offsets[target_unit];
  const uint32_t end = plan.layout.offsets[target_unit + 1];
  const size_t payload_len = static_cast<size_t>(end - begin) * cfg.channels;
  if (upstream_payload.size() != payload_len)
    throw std::invalid_argument("upstream gradient length " +
                                std::to_string(upstream_payload.size()) +
                                " != unit payload length " +
                                std::to_string(payload_len));

  std::vector<double> upstream(
      static_cast<size_t>(plan.layout.total_tokens) * cfg.channels, 0.0);
  for (uint32_t tok = begin; tok < end; ++tok)
    for (uint32_t ci = 0; ci < cfg.channels; ++ci)
      upstream[static_cast<size_t>(tok) * cfg.channels + ci] =
          upstream_payload[static_cast<size_t>(tok - begin) * cfg.channels + ci];

  const NetConfig net = generator_net_config(cfg);
  const std::vector<double> inputs = slab_to_double(slab);
  return net_backward(net, params, inputs, plan.meta, mask, tape, upstream);
}

UnitSequence generate_sequence(const GenConfig& cfg, const NetParams& params,
                               uint32_t t, uint32_t h, uint32_t w, uint32_t c,
                               Rng& rng) {
  if (c != cfg.channels)
    throw std::invalid_argument("volume channels " + std::to_string(c) +
                                " != generator channels " +
                                std::to_string(cfg.channels));
  validate_scheme(cfg.scheme, t, h, w);
  const TokenPlan plan = token_plan(cfg.scheme, t, h, w, c);
  const AttentionMask mask = build_mask(plan.layout, MaskDirection::Forward);
  const uint32_t n_units =
      static_cast<uint32_t>(plan.layout.tokens_per_unit.size());

  UnitSequence seq;
  seq.scheme = cfg.scheme;
  seq.dims = {t, h, w, c};

  const bool multiscale = std::holds_alternative<MultiscaleScheme>(cfg.scheme);
  std::vector<std::vector<std::array<uint32_t, 3>>> owners;
  if (!multiscale) owners = unit_ownerships(cfg.scheme, t, h, w);
  const auto* ms = std::get_if<MultiscaleScheme>(&cfg.scheme);

  std::vector<float> slab(
      static_cast<size_t>(plan.layout.total_tokens) * c, 0.0f);
  for (uint32_t i = 0; i < n_units; ++i) {
    const uint32_t begin = plan.layout.offsets[i];
    const uint32_t end = plan.layout.offsets[i + 1];
    const size_t payload_len = static_cast<size_t>(end - begin) * c;

    const NoiseDraw noise = draw_unit_noise(rng, payload_len);
    std::copy(noise.z.begin(), noise.z.end(),
              slab.begin() + static_cast<size_t>(begin) * c);

    std::vector<float> payload =
        forward_step(cfg, params, plan, slab, mask, i);
    std::copy(payload.begin(), payload.end(),
              slab.begin() + static_cast<size_t>(begin) * c);

    Unit u;
    u.index = i;
    u.payload = std::move(payload);
    if (multiscale) {
      u.is_scale = true;
      u.scale_level = i;
      u.scale_dims = ms->scales[i];
    } else {
      u.ownership = owners[i];
    }
    seq.units.push_back(std::move(u));
  }
  return seq;
}

}  // namespace unitar
