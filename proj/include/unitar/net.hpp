// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "unitar/kvcache.hpp"
#include "unitar/mask.hpp"
#include "unitar/tensor.hpp"

namespace unitar {

// Pre-norm transformer over per-voxel tokens. Parameters are stored as f32;
// every forward/backward computation runs in double so reverse-mode
// gradients line up with 64-bit central differences.
struct NetConfig {
  uint32_t in_dim = 1;
  uint32_t out_dim = 1;
  uint32_t d_model = 16;
  uint32_t n_layers = 2;
  uint32_t n_heads = 4;
  uint32_t max_unit_tokens = 64;  // learned intra-unit position table size
  uint64_t param_seed = 0;
};

struct ParamBlock {
  std::string name;
  size_t offset = 0;
  size_t count = 0;
};

struct NetParams {
  std::vector<float> theta;
  std::vector<ParamBlock> blocks;

  size_t size() const { return theta.size(); }
  std::span<const float> block(std::string_view name) const;
  std::span<float> block_mut(std::string_view name);
};

size_t net_param_count(const NetConfig& cfg);

/// Deterministic init: projection weights N(0, 0.02^2), layer-norm gains 1,
/// all biases 0, position table N(0, 0.02^2).
NetParams net_init(const NetConfig& cfg);

/// Per-token structure: global unit index (drives the sinusoidal unit
/// position code) and intra-unit offset (indexes the learned table).
struct TokenMeta {
  std::vector<uint64_t> unit;
  std::vector<uint32_t> offset;
};

/// Saved activations from one forward pass; required by net_backward.
struct NetTape {
  uint32_t n_tokens = 0;
  std::vector<double> embed;  // n x d, post-embedding residual stream
  struct Layer {
    std::vector<double> ln1_xhat, ln2_xhat;  // n x d
    std::vector<double> ln1_inv, ln2_inv;    // n
    std::vector<double> q, k, v;             // n x d
    std::vector<double> probs;               // heads x n x n
    std::vector<double> ctx;                 // n x d
    std::vector<double> h_mid;               // n x d, after attention residual
    std::vector<double> mlp_pre, mlp_act;    // n x 4d
  };
  std::vector<Layer> layers;
  std::vector<double> h_final;               // n x d, input to final norm
  std::vector<double> lnf_xhat;              // n x d
  std::vector<double> lnf_inv;               // n
  std::vector<double> lnf_out;               // n x d
};

/// Full-buffer evaluation. `inputs` is n_tokens x in_dim row-major; the mask
/// decides which keys each query may touch (disallowed keys are skipped
/// entirely, so their values cannot leak through the arithmetic). Returns
/// n_tokens x out_dim.
std::vector<double> net_forward(const NetConfig& cfg, const NetParams& params,
                                std::span<const double> inputs,
                                const TokenMeta& meta,
                                const AttentionMask& mask, NetTape* tape);

/// Exact reverse-mode gradient of <upstream, net_forward(...)> with respect
/// to theta. `tape` must come from a forward over the same inputs.
std::vector<double> net_backward(const NetConfig& cfg, const NetParams& params,
                                 std::span<const double> inputs,
                                 const TokenMeta& meta,
                                 const AttentionMask& mask, const NetTape& tape,
                                 std::span<const double> upstream);

/// One block-causal pass over a single unit's tokens against a KV cache:
/// the unit attends every resident cached unit plus itself, keys ascending.
/// When `append` is set the unit's per-layer K/V blocks are pushed into the
/// cache (evictions per the cache policy). Returns n_tokens x out_dim.
std::vector<double> net_incremental(const NetConfig& cfg,
                                    const NetParams& params,
                                    std::span<const double> unit_inputs,
                                    uint64_t unit_index,
                                    std::span<const uint32_t> offsets,
                                    KVCache& cache, bool append);

struct NetCounters {
  uint64_t attn_macs = 0;       // multiply-accumulates inside attention
  uint64_t full_forwards = 0;
  uint64_t incremental_passes = 0;
};
NetCounters& net_counters();

// Checkpoint format: magic "UCKP", u16 version = 1, u32 block count, then
// per block u16 name length, name bytes, u64 element count, LE f32 data.
// Round-trip is bit-exact.
void save_checkpoint(const NetParams& params, const std::string& path);
NetParams load_checkpoint(const std::string& path);
std::vector<uint8_t> checkpoint_to_bytes(const NetParams& params);
NetParams checkpoint_from_bytes(std::span<const uint8_t> bytes);

}  // namespace unitar
