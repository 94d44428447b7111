// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "unitar/generator.hpp"
#include "unitar/kvcache.hpp"

namespace unitar {

/// Constant-memory long-horizon generation: one KV cache per stream, FIFO
/// eviction beyond `window` units, optional pinned first unit. Each
/// generated unit costs one decode pass (noise in) and one encode pass
/// (payload in, K/V cached), so the cached context always reflects the
/// payloads the full-buffer path would see; with window >= N the stream
/// output is bit-identical to generate_sequence.

struct UnitMetric {
  uint64_t unit_index = 0;
  uint64_t latency_ns = 0;
  size_t resident_bytes = 0;   // after this unit's append and eviction
  uint32_t context_units = 0;  // resident units attended by this unit
  uint32_t context_tokens = 0;
  uint64_t attn_macs = 0;      // decode + encode attention MACs
};

struct StreamMetrics {
  std::vector<UnitMetric> per_unit;
  uint64_t units_generated = 0;
  size_t peak_kv_bytes = 0;
};

struct StreamOptions {
  uint32_t window = 1;
  bool pin_first = false;
  uint32_t n_segments = 1;
};

struct StreamResult {
  std::vector<UnitSequence> segments;
  StreamMetrics metrics;
};

/// Generate n_segments back-to-back scheme instances with continuing global
/// unit indices, conditioning each unit on exactly the resident cache.
StreamResult stream_generate(const GenConfig& cfg, const NetParams& params,
                             uint32_t t, uint32_t h, uint32_t w, uint32_t c,
                             const StreamOptions& opts, Rng& rng);

/// Exact attention multiply-accumulate count for one generated unit
/// (decode + encode) given its context size.
uint64_t attention_macs_per_unit(const GenConfig& cfg, uint32_t context_tokens,
                                 uint32_t unit_tokens);

struct BenchReport {
  std::string scheme;
  uint32_t window = 0;
  uint32_t warmup = 0;
  uint32_t units_per_segment = 0;
  std::vector<uint32_t> tokens_per_unit;  // one segment's layout
  std::vector<UnitMetric> per_unit;
  size_t peak_kv_bytes = 0;
  double leading_median_ns = 0.0;
  double trailing_median_ns = 0.0;
  bool latency_drift = false;   // trailing median > 1.2x leading median
  bool macs_match_analytic = false;
  uint64_t steady_state_macs = 0;  // per-unit MACs once the window is full
};

/// Stream n_units units at the given window and report per-unit latency
/// (after warmup), KV residency, and exact attention cost, cross-checking
/// the instrumented MAC counter against the closed-form count.
BenchReport bench_throughput(const GenConfig& cfg, const NetParams& params,
                             uint32_t t, uint32_t h, uint32_t w, uint32_t c,
                             uint32_t window, uint32_t n_units, uint32_t warmup,
                             uint64_t seed);

}  // namespace unitar
