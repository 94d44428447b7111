// SPDX-License-Identifier: Apache-2.0
#include "unitar/streaming.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "unitar/errors.hpp"

namespace unitar {

StreamResult stream_generate(const GenConfig& cfg, const NetParams& params,
                             uint32_t t, uint32_t h, uint32_t w, uint32_t c,
                             const StreamOptions& opts, Rng& rng) {
  if (opts.window == 0) throw std::invalid_argument("window must be >= 1");
  if (opts.n_segments == 0)
    throw std::invalid_argument("n_segments must be >= 1");
  if (c != cfg.channels)
    throw std::invalid_argument("volume channels do not match generator");
  validate_scheme(cfg.scheme, t, h, w);

  const NetConfig net = generator_net_config(cfg);
  const UnitLayout layout = layout_for(cfg.scheme, t, h, w, 1);
  const uint32_t n_units = static_cast<uint32_t>(layout.tokens_per_unit.size());

  const bool multiscale = std::holds_alternative<MultiscaleScheme>(cfg.scheme);
  std::vector<std::vector<std::array<uint32_t, 3>>> owners;
  if (!multiscale) owners = unit_ownerships(cfg.scheme, t, h, w);
  const auto* ms = std::get_if<MultiscaleScheme>(&cfg.scheme);

  KVCache cache(net.n_layers, net.d_model, opts.window, opts.pin_first);
  StreamResult result;
  result.segments.reserve(opts.n_segments);

  for (uint32_t seg = 0; seg < opts.n_segments; ++seg) {
    UnitSequence seq;
    seq.scheme = cfg.scheme;
    seq.dims = {t, h, w, c};

    for (uint32_t i = 0; i < n_units; ++i) {
      const uint64_t global_unit =
          static_cast<uint64_t>(seg) * n_units + i;
      const uint32_t m = layout.tokens_per_unit[i];
      const size_t payload_len = static_cast<size_t>(m) * c;

      const NoiseDraw noise = draw_unit_noise(rng, payload_len);
      std::vector<uint32_t> offsets(m);
      for (uint32_t o = 0; o < m; ++o) offsets[o] = o;

      UnitMetric metric;
      metric.unit_index = global_unit;
      metric.context_units = static_cast<uint32_t>(cache.resident_units());
      metric.context_tokens = cache.resident_tokens();
      const uint64_t macs_before = net_counters().attn_macs;
      const auto t0 = std::chrono::steady_clock::now();

      // decode: noise in, payload out
      std::vector<double> inputs(payload_len);
      for (size_t p = 0; p < payload_len; ++p) inputs[p] = noise.z[p];
      const std::vector<double> y =
          net_incremental(net, params, inputs, global_unit, offsets, cache,
                          /*append=*/false);
      std::vector<float> payload(payload_len);
      for (size_t p = 0; p < payload_len; ++p)
        payload[p] = static_cast<float>(y[p]);

      // encode: payload in, K/V appended for the units that follow
      for (size_t p = 0; p < payload_len; ++p) inputs[p] = payload[p];
      net_incremental(net, params, inputs, global_unit, offsets, cache,
                      /*append=*/true);

      const auto t1 = std::chrono::steady_clock::now();
      metric.latency_ns = static_cast<uint64_t>(
          std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0)
              .count());
      metric.attn_macs = net_counters().attn_macs - macs_before;
      metric.resident_bytes = cache.resident_bytes();
      result.metrics.per_unit.push_back(metric);
      result.metrics.units_generated += 1;

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
    result.segments.push_back(std::move(seq));
  }
  result.metrics.peak_kv_bytes = cache.peak_bytes();
  return result;
}

uint64_t attention_macs_per_unit(const GenConfig& cfg, uint32_t context_tokens,
                                 uint32_t unit_tokens) {
  // per pass, per layer, per query: (ctx + m) keys scored and weighted,
  // each a head_dim-long MAC chain, summed over heads = 2 (ctx+m) d_model;
  // two passes per unit (decode + encode)
  const uint64_t keys = static_cast<uint64_t>(context_tokens) + unit_tokens;
  return 2ull * 2ull * cfg.n_layers * unit_tokens * keys * cfg.d_model;
}

namespace {

double median_of(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const size_t mid = values.size() / 2;
  if (values.size() % 2 == 1) return values[mid];
  return 0.5 * (values[mid - 1] + values[mid]);
}

}  // namespace

BenchReport bench_throughput(const GenConfig& cfg, const NetParams& params,
                             uint32_t t, uint32_t h, uint32_t w, uint32_t c,
                             uint32_t window, uint32_t n_units, uint32_t warmup,
                             uint64_t seed) {
  if (n_units == 0) throw std::invalid_argument("n_units must be >= 1");
  if (warmup >= n_units)
    throw std::invalid_argument("warmup count must be below n_units");

  const UnitLayout layout = layout_for(cfg.scheme, t, h, w, 1);
  const uint32_t per_segment =
      static_cast<uint32_t>(layout.tokens_per_unit.size());
  const uint32_t segments = (n_units + per_segment - 1) / per_segment;

  Rng rng(seed);
  StreamOptions opts;
  opts.window = window;
  opts.n_segments = segments;
  StreamResult stream = stream_generate(cfg, params, t, h, w, c, opts, rng);
  stream.metrics.per_unit.resize(n_units);

  BenchReport report;
  report.scheme = scheme_to_string(cfg.scheme);
  report.window = window;
  report.warmup = warmup;
  report.units_per_segment = per_segment;
  report.tokens_per_unit = layout.tokens_per_unit;
  report.per_unit = stream.metrics.per_unit;
  report.peak_kv_bytes = stream.metrics.peak_kv_bytes;

  std::vector<double> post_warmup;
  post_warmup.reserve(n_units - warmup);
  for (uint32_t i = warmup; i < n_units; ++i)
    post_warmup.push_back(
        static_cast<double>(report.per_unit[i].latency_ns));
  const size_t half = post_warmup.size() / 2;
  report.leading_median_ns = median_of(
      {post_warmup.begin(), post_warmup.begin() + static_cast<long>(half)});
  report.trailing_median_ns = median_of(
      {post_warmup.begin() + static_cast<long>(half), post_warmup.end()});
  report.latency_drift =
      report.trailing_median_ns > 1.2 * report.leading_median_ns;

  report.macs_match_analytic = true;
  for (uint32_t i = 0; i < n_units; ++i) {
    const UnitMetric& um = report.per_unit[i];
    const uint32_t m = layout.tokens_per_unit[i % per_segment];
    if (um.attn_macs !=
        attention_macs_per_unit(cfg, um.context_tokens, m)) {
      report.macs_match_analytic = false;
      break;
    }
  }
  // steady state: the window holds `window` full units
  uint32_t steady_ctx = 0;
  for (uint32_t i = 0; i < n_units; ++i)
    steady_ctx = std::max(steady_ctx, report.per_unit[i].context_tokens);
  report.steady_state_macs = attention_macs_per_unit(
      cfg, steady_ctx, layout.tokens_per_unit[0]);
  return report;
}

}  // namespace unitar
