// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "unitar/tensor.hpp"

namespace unitar {

// The four factorizations of a latent volume into prediction units.
struct FrameScheme {};

struct KeyDetailScheme {
  uint32_t k = 2;  // k >= 2, k | T; unit j owns frames congruent to j mod k
};

struct CubeScheme {
  uint32_t k_t = 1, k_h = 1, k_w = 1;  // each divides its axis
};

struct MultiscaleScheme {
  // Ordered (s_t, s_h, s_w) triples, elementwise nondecreasing, no
  // duplicates, last equal to the full (T, H, W).
  std::vector<std::array<uint32_t, 3>> scales;
};

using UnitScheme =
    std::variant<FrameScheme, KeyDetailScheme, CubeScheme, MultiscaleScheme>;

std::string scheme_name(const UnitScheme& s);
/// Canonical spec string, e.g. "cube:2,4,4".
std::string scheme_to_string(const UnitScheme& s);

/// One prediction unit: payload floats plus the voxel coordinates it owns
/// (Frame/KeyDetail/Cube) or its pyramid level and dims (Multiscale).
struct Unit {
  uint32_t index = 0;
  std::vector<float> payload;
  std::vector<std::array<uint32_t, 3>> ownership;  // (t, h, w), payload order
  bool is_scale = false;
  uint32_t scale_level = 0;
  std::array<uint32_t, 3> scale_dims{0, 0, 0};
};

struct UnitSequence {
  UnitScheme scheme;
  std::array<uint32_t, 4> dims{0, 0, 0, 0};  // (t, h, w, c) of the source
  std::vector<Unit> units;
};

/// Token bookkeeping bridging units to attention masks.
struct UnitLayout {
  std::vector<uint32_t> tokens_per_unit;
  std::vector<uint32_t> offsets;  // prefix sums, size N+1
  uint32_t total_tokens = 0;
};

/// Throws std::invalid_argument naming the failing axis if the scheme does
/// not fit the dims.
void validate_scheme(const UnitScheme& s, uint32_t t, uint32_t h, uint32_t w);

/// Closed-form autoregressive step count N.
uint32_t step_count(const UnitScheme& s, uint32_t t, uint32_t h, uint32_t w);

/// Voxel ownership per unit for Frame/KeyDetail/Cube, in canonical order.
/// Multiscale schemes have no voxel ownership; use scale_dims instead.
std::vector<std::vector<std::array<uint32_t, 3>>> unit_ownerships(
    const UnitScheme& s, uint32_t t, uint32_t h, uint32_t w);

/// Split a volume into its ordered unit sequence. Pure and deterministic.
UnitSequence partition(const LatentVolume& z, const UnitScheme& s);

/// Exact inverse of partition for Frame/KeyDetail/Cube (bit-exact); for
/// Multiscale returns the finest unit reshaped. Ownership overlap or gap
/// raises IntegrityError.
LatentVolume reconstruct(const UnitSequence& seq);

UnitLayout layout_of(const UnitSequence& seq, uint32_t tokens_per_voxel);
/// Layout derived from scheme + dims alone (no payloads needed).
UnitLayout layout_for(const UnitScheme& s, uint32_t t, uint32_t h, uint32_t w,
                      uint32_t tokens_per_voxel);

// Unit-sequence file format: magic "VUSQ", u16 version = 1, u8 scheme tag +
// params, four LE u32 dims, u32 N, then per unit either a voxel block
// (u8 0, u32 count, count * 3 u32 coords, count*c f32) or a scale block
// (u8 1, u32 level, 3 u32 dims, volume*c f32). Same endianness as "VLAT".
void write_units(const UnitSequence& seq, const std::string& path);
UnitSequence read_units(const std::string& path);
std::vector<uint8_t> units_to_bytes(const UnitSequence& seq);
UnitSequence units_from_bytes(std::span<const uint8_t> bytes);

}  // namespace unitar
