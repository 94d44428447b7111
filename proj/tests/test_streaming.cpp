// SPDX-License-Identifier: Apache-2.0
#include "unitar/streaming.hpp"

#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "unitar/errors.hpp"

using namespace unitar;

namespace {

GenConfig stream_config(UnitScheme scheme, uint32_t channels = 1) {
  GenConfig cfg;
  cfg.scheme = std::move(scheme);
  cfg.channels = channels;
  cfg.d_model = 8;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.max_unit_tokens = 64;
  cfg.param_seed = 21;
  return cfg;
}

std::vector<std::pair<std::vector<double>, std::vector<double>>> fake_kv(
    uint32_t n_layers, uint32_t n_tokens, uint32_t d_model, double fill) {
  std::vector<std::pair<std::vector<double>, std::vector<double>>> kv(n_layers);
  for (auto& [k, v] : kv) {
    k.assign(static_cast<size_t>(n_tokens) * d_model, fill);
    v.assign(static_cast<size_t>(n_tokens) * d_model, -fill);
  }
  return kv;
}

}  // namespace

TEST_SUITE_BEGIN("streaming");

TEST_CASE("kv cache: fifo eviction beyond the window") {
  KVCache cache(2, 4, 3);
  for (uint64_t u = 0; u < 3; ++u)
    CHECK(cache.append_unit(u, 2, fake_kv(2, 2, 4, 1.0)).empty());
  CHECK(cache.resident_units() == 3);
  const auto evicted = cache.append_unit(3, 2, fake_kv(2, 2, 4, 1.0));
  CHECK(evicted == std::vector<uint64_t>{0});
  CHECK(cache.resident_units() == 3);
}

TEST_CASE("kv cache: pinned first unit survives eviction") {
  KVCache cache(1, 4, 3, /*pin_first=*/true);
  for (uint64_t u = 0; u <= 2; ++u) cache.append_unit(u, 1, fake_kv(1, 1, 4, 1.0));
  const auto evicted = cache.append_unit(3, 1, fake_kv(1, 1, 4, 1.0));
  CHECK(evicted == std::vector<uint64_t>{1});
  CHECK(cache.layer_blocks(0).front().unit_index == 0);
}

TEST_CASE("kv cache: pin with a window of one keeps only the anchor") {
  KVCache cache(1, 4, 1, /*pin_first=*/true);
  cache.append_unit(0, 1, fake_kv(1, 1, 4, 1.0));
  for (uint64_t u = 1; u < 5; ++u) {
    const auto evicted = cache.append_unit(u, 1, fake_kv(1, 1, 4, 1.0));
    CHECK(evicted == std::vector<uint64_t>{u});
    CHECK(cache.resident_units() == 1);
    CHECK(cache.layer_blocks(0).front().unit_index == 0);
  }
}

TEST_CASE("kv cache: out-of-order appends rejected") {
  KVCache cache(1, 4, 4);
  cache.append_unit(2, 1, fake_kv(1, 1, 4, 1.0));
  CHECK_THROWS_AS(cache.append_unit(1, 1, fake_kv(1, 1, 4, 1.0)),
                  ProtocolError);
  CHECK_THROWS_AS(cache.append_unit(2, 1, fake_kv(1, 1, 4, 1.0)),
                  ProtocolError);
}

TEST_CASE("kv cache: resident count bounded after every append") {
  Rng rng(17);
  KVCache cache(2, 4, 2);
  for (uint64_t u = 0; u < 20; ++u) {
    const uint32_t tokens = 1 + static_cast<uint32_t>(rng.uniform() * 3);
    cache.append_unit(u, tokens, fake_kv(2, tokens, 4, 0.5));
    CHECK(cache.resident_units() <= 2);
  }
}

TEST_CASE("streaming with a window covering the sequence is bit-identical") {
  const std::vector<UnitScheme> schemes = {
      FrameScheme{}, KeyDetailScheme{2}, CubeScheme{2, 2, 2},
      MultiscaleScheme{{{1, 1, 1}, {2, 2, 2}, {4, 4, 4}}}};
  for (const auto& scheme : schemes) {
    for (uint64_t seed : {1ull, 2ull}) {
      const GenConfig cfg = stream_config(scheme, 2);
      const NetParams params = init_params(cfg);
      Rng r1(seed), r2(seed);
      const UnitSequence direct = generate_sequence(cfg, params, 4, 4, 4, 2, r1);
      StreamOptions opts;
      opts.window = static_cast<uint32_t>(direct.units.size());
      const StreamResult stream =
          stream_generate(cfg, params, 4, 4, 4, 2, opts, r2);
      REQUIRE(stream.segments.size() == 1);
      const UnitSequence& streamed = stream.segments[0];
      REQUIRE(streamed.units.size() == direct.units.size());
      for (size_t i = 0; i < direct.units.size(); ++i)
        CHECK(testutil::bit_equal(direct.units[i].payload,
                                  streamed.units[i].payload));
    }
  }
}

TEST_CASE("window of one survives a long run") {
  const GenConfig cfg = stream_config(FrameScheme{});
  const NetParams params = init_params(cfg);
  StreamOptions opts;
  opts.window = 1;
  opts.n_segments = 100;
  Rng rng(3);
  const StreamResult res = stream_generate(cfg, params, 2, 2, 2, 1, opts, rng);
  CHECK(res.metrics.units_generated == 200);
  for (const auto& seg : res.segments)
    for (const auto& u : seg.units)
      for (float v : u.payload) CHECK(std::isfinite(v));
  for (const auto& m : res.metrics.per_unit) CHECK(m.context_units <= 1);
}

TEST_CASE("peak kv bytes do not grow with the horizon") {
  const GenConfig cfg = stream_config(FrameScheme{});
  const NetParams params = init_params(cfg);
  auto run = [&](uint32_t segments) {
    StreamOptions opts;
    opts.window = 3;
    opts.n_segments = segments;
    Rng rng(4);
    return stream_generate(cfg, params, 2, 2, 2, 1, opts, rng).metrics;
  };
  const StreamMetrics m10 = run(10);
  const StreamMetrics m100 = run(100);
  CHECK(m100.peak_kv_bytes == m10.peak_kv_bytes);
  const double rel =
      std::abs(static_cast<double>(m100.peak_kv_bytes) -
               static_cast<double>(m10.peak_kv_bytes)) /
      static_cast<double>(m10.peak_kv_bytes);
  CHECK(rel < 0.01);
}

TEST_CASE("boundedness: resident units never exceed the window") {
  const GenConfig cfg = stream_config(CubeScheme{1, 2, 2});
  const NetParams params = init_params(cfg);
  StreamOptions opts;
  opts.window = 2;
  opts.n_segments = 6;
  Rng rng(9);
  const StreamResult res = stream_generate(cfg, params, 2, 2, 2, 1, opts, rng);
  for (const auto& m : res.metrics.per_unit) {
    CHECK(m.context_units <= 2);
    CHECK(m.resident_bytes <= res.metrics.peak_kv_bytes);
  }
}

TEST_CASE("instrumented attention cost matches the closed form") {
  const GenConfig cfg = stream_config(FrameScheme{});
  const NetParams params = init_params(cfg);
  const BenchReport report =
      bench_throughput(cfg, params, 2, 2, 2, 1, /*window=*/3, /*n_units=*/24,
                       /*warmup=*/4, /*seed=*/7);
  CHECK(report.macs_match_analytic);
  for (const auto& m : report.per_unit)
    CHECK(m.attn_macs ==
          attention_macs_per_unit(cfg, m.context_tokens, 4));
}

TEST_CASE("doubling the window strictly increases per-unit attention cost") {
  const GenConfig cfg = stream_config(FrameScheme{});
  const NetParams params = init_params(cfg);
  const BenchReport narrow =
      bench_throughput(cfg, params, 2, 2, 2, 1, 2, 24, 4, 7);
  const BenchReport wide =
      bench_throughput(cfg, params, 2, 2, 2, 1, 4, 24, 4, 7);
  CHECK(wide.steady_state_macs > narrow.steady_state_macs);
  // steady-state units (full window) cost exactly f(W, tokens/unit)
  CHECK(narrow.per_unit.back().attn_macs ==
        attention_macs_per_unit(cfg, 2 * 4, 4));
  CHECK(wide.per_unit.back().attn_macs ==
        attention_macs_per_unit(cfg, 4 * 4, 4));
}

TEST_CASE("attention cost is constant once the window fills") {
  const GenConfig cfg = stream_config(FrameScheme{});
  const NetParams params = init_params(cfg);
  const uint32_t window = 3;
  const BenchReport report =
      bench_throughput(cfg, params, 2, 2, 2, 1, window, 40, 4, 11);
  // after the first `window` units every unit does identical work,
  // regardless of how many units came before
  const uint64_t steady = report.per_unit[window].attn_macs;
  for (uint32_t i = window; i < 40; ++i)
    CHECK(report.per_unit[i].attn_macs == steady);
}

TEST_CASE("heterogeneous units: per-unit cost tracks each unit's context") {
  GenConfig cfg = stream_config(
      MultiscaleScheme{{{1, 1, 1}, {2, 2, 2}, {4, 4, 4}}});
  const NetParams params = init_params(cfg);
  const BenchReport report =
      bench_throughput(cfg, params, 4, 4, 4, 1, /*window=*/2, /*n_units=*/9,
                       /*warmup=*/2, /*seed=*/13);
  CHECK(report.macs_match_analytic);
  CHECK(report.tokens_per_unit == std::vector<uint32_t>{1, 8, 64});
}

TEST_CASE("latency stays flat over a long constant-window run") {
  // per-unit work is sized so a median is well above scheduler noise; one
  // retry tolerates exogenous load spikes on shared machines
  GenConfig cfg = stream_config(FrameScheme{});
  cfg.d_model = 16;
  cfg.n_heads = 4;
  const NetParams params = init_params(cfg);
  bool flat = false;
  double leading = 0.0;
  for (int attempt = 0; attempt < 3 && !flat; ++attempt) {
    const BenchReport report =
        bench_throughput(cfg, params, 2, 8, 8, 1, 3, 80, 10, 5);
    flat = !report.latency_drift;
    leading = report.leading_median_ns;
  }
  CHECK(flat);
  CHECK(leading > 0.0);
}

TEST_CASE("step counts and tokens per step across schemes") {
  // same unit count, same tokens per step here; the report carries both
  const GenConfig frame_cfg = stream_config(FrameScheme{});
  const NetParams frame_params = init_params(frame_cfg);
  const BenchReport frame_report =
      bench_throughput(frame_cfg, frame_params, 8, 8, 8, 1, 2, 8, 2, 1);
  CHECK(frame_report.units_per_segment == 8);
  CHECK(frame_report.tokens_per_unit == std::vector<uint32_t>(8, 64));

  const GenConfig cube_cfg = stream_config(CubeScheme{4, 4, 4});
  const NetParams cube_params = init_params(cube_cfg);
  const BenchReport cube_report =
      bench_throughput(cube_cfg, cube_params, 8, 8, 8, 1, 2, 8, 2, 1);
  CHECK(cube_report.units_per_segment == 8);
  CHECK(cube_report.tokens_per_unit == std::vector<uint32_t>(8, 64));
  CHECK(cube_report.scheme == "cube:4,4,4");
}

TEST_CASE("stream rejects invalid options") {
  const GenConfig cfg = stream_config(FrameScheme{});
  const NetParams params = init_params(cfg);
  Rng rng(1);
  StreamOptions opts;
  opts.window = 0;
  CHECK_THROWS_AS(stream_generate(cfg, params, 2, 2, 2, 1, opts, rng),
                  std::invalid_argument);
  CHECK_THROWS_AS(
      bench_throughput(cfg, params, 2, 2, 2, 1, 2, 8, /*warmup=*/8, 1),
      std::invalid_argument);
}

TEST_SUITE_END();
