// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <deque>
#include <optional>
#include <vector>

namespace unitar {

/// Cached key/value block of one unit at one layer (n_tokens x d_model).
struct KVUnitBlock {
  uint64_t unit_index = 0;
  uint32_t n_tokens = 0;
  std::vector<double> k, v;
};

/// Per-layer KV blocks keyed by unit index, FIFO eviction beyond the
/// capacity window, optionally keeping the very first unit pinned as a
/// global anchor. One cache per generation stream; single-owner.
class KVCache {
 public:
  KVCache(uint32_t n_layers, uint32_t d_model, size_t capacity_units,
          bool pin_first = false);

  /// Insert one unit's per-layer K/V (layer-major, each n_tokens x d_model),
  /// then evict oldest non-pinned units until the resident count fits the
  /// window. Unit indices must be strictly increasing; anything else is a
  /// ProtocolError. Returns the evicted unit indices in eviction order.
  std::vector<uint64_t> append_unit(
      uint64_t unit_index, uint32_t n_tokens,
      std::vector<std::pair<std::vector<double>, std::vector<double>>>
          per_layer_kv);

  const std::deque<KVUnitBlock>& layer_blocks(uint32_t layer) const {
    return layers_.at(layer);
  }

  uint32_t n_layers() const { return n_layers_; }
  uint32_t d_model() const { return d_model_; }
  size_t capacity_units() const { return capacity_units_; }
  size_t resident_units() const;
  uint32_t resident_tokens() const;
  size_t resident_bytes() const { return resident_bytes_; }
  size_t peak_bytes() const { return peak_bytes_; }

 private:
  uint32_t n_layers_;
  uint32_t d_model_;
  size_t capacity_units_;
  bool pin_first_;
  std::optional<uint64_t> pinned_unit_;
  std::optional<uint64_t> last_index_;
  std::vector<std::deque<KVUnitBlock>> layers_;
  size_t resident_bytes_ = 0;
  size_t peak_bytes_ = 0;
};

}  // namespace unitar
