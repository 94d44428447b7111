// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "unitar/units.hpp"

namespace unitar {

enum class MaskDirection : uint8_t { Forward, Backward, Full };

std::string direction_name(MaskDirection d);

/// Token-level boolean attention mask. Row = query token, column = key
/// token. Attention between units is one-directional per `dir`; attention
/// inside a unit is always full. Immutable after construction.
struct AttentionMask {
  uint32_t n_tokens = 0;
  MaskDirection dir = MaskDirection::Full;
  std::vector<uint8_t> allowed;        // n_tokens * n_tokens
  std::vector<uint32_t> unit_of_token;

  bool at(uint32_t q, uint32_t k) const {
    return allowed[static_cast<size_t>(q) * n_tokens + k] != 0;
  }
  uint32_t n_units() const;
};

/// Materialize the block mask for a unit layout. Throws on zero tokens.
AttentionMask build_mask(const UnitLayout& layout, MaskDirection dir);

struct CausalityReport {
  bool clean = true;
  uint32_t q = 0, k = 0;
  std::string detail;
};

/// Exhaustively check `mask` against the given direction's invariant:
/// Forward requires allowed(q,k) <=> unit(k) <= unit(q), Backward the
/// mirror, Full all-true. Returns the first violating (q, k) pair.
CausalityReport verify_causality(const AttentionMask& mask, MaskDirection dir);

/// Relabel unit order i -> N-1-i and rebuild under the mask's own
/// direction. Maps Forward-built masks onto Backward-built ones and back;
/// an involution.
AttentionMask reverse_mask(const AttentionMask& mask);

/// Plain-text 0/1 grid, one row per query.
std::string mask_to_text(const AttentionMask& mask);
/// Binary PGM (P5), one pixel per entry, allowed = white.
std::vector<uint8_t> mask_to_pgm(const AttentionMask& mask);

}  // namespace unitar
