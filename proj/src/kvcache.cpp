// SPDX-License-Identifier: Apache-2.0
#include "unitar/kvcache.hpp"

#include <stdexcept>
#include <string>

#include "unitar/errors.hpp"

namespace unitar {

KVCache::KVCache(uint32_t n_layers, uint32_t d_model, size_t capacity_units,
                 bool pin_first)
    : n_layers_(n_layers),
      d_model_(d_model),
      capacity_units_(capacity_units),
      pin_first_(pin_first),
      layers_(n_layers) {
  if (n_layers == 0 || d_model == 0)
    throw std::invalid_argument("KVCache needs n_layers and d_model >= 1");
  if (capacity_units == 0)
    throw std::invalid_argument("KVCache capacity must be >= 1");
}

size_t KVCache::resident_units() const {
  return layers_.empty() ? 0 : layers_[0].size();
}

uint32_t KVCache::resident_tokens() const {
  uint32_t total = 0;
  if (!layers_.empty())
    for (const auto& b : layers_[0]) total += b.n_tokens;
  return total;
}

std::vector<uint64_t> KVCache::append_unit(
    uint64_t unit_index, uint32_t n_tokens,
    std::vector<std::pair<std::vector<double>, std::vector<double>>>
        per_layer_kv) {
  if (last_index_ && unit_index <= *last_index_) {
    throw ProtocolError("unit index " + std::to_string(unit_index) +
                        " appended after " + std::to_string(*last_index_) +
                        "; indices must be strictly increasing");
  }
  if (per_layer_kv.size() != n_layers_)
    throw std::invalid_argument("expected one K/V pair per layer");
  const size_t expect = static_cast<size_t>(n_tokens) * d_model_;
  for (auto& [k, v] : per_layer_kv)
    if (k.size() != expect || v.size() != expect)
      throw std::invalid_argument("K/V block size mismatch");

  last_index_ = unit_index;
  if (pin_first_ && !pinned_unit_) pinned_unit_ = unit_index;

  for (uint32_t layer = 0; layer < n_layers_; ++layer) {
    KVUnitBlock block;
    block.unit_index = unit_index;
    block.n_tokens = n_tokens;
    block.k = std::move(per_layer_kv[layer].first);
    block.v = std::move(per_layer_kv[layer].second);
    resident_bytes_ += (block.k.size() + block.v.size()) * sizeof(double);
    layers_[layer].push_back(std::move(block));
  }
  if (resident_bytes_ > peak_bytes_) peak_bytes_ = resident_bytes_;

  std::vector<uint64_t> evicted;
  while (resident_units() > capacity_units_) {
    // oldest non-pinned unit goes first
    size_t victim = 0;
    if (pinned_unit_ && layers_[0][victim].unit_index == *pinned_unit_) {
      victim = 1;
      if (victim >= layers_[0].size()) break;  // only the pinned unit is left
    }
    evicted.push_back(layers_[0][victim].unit_index);
    for (uint32_t layer = 0; layer < n_layers_; ++layer) {
      auto& dq = layers_[layer];
      resident_bytes_ -=
          (dq[victim].k.size() + dq[victim].v.size()) * sizeof(double);
      dq.erase(dq.begin() + static_cast<std::ptrdiff_t>(victim));
    }
  }
  return evicted;
}

}  // namespace unitar
