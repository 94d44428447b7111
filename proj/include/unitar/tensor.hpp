// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace unitar {

/// Deterministic pseudo-random generator (xoshiro256** seeded via
/// splitmix64). The draw sequence depends only on the seed, on every
/// platform. Instances are single-owner; do not share across threads.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  /// Uniform double in [0, 1).
  double uniform();
  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi);
  /// Standard normal via Box-Muller (one spare cached).
  double normal();
  float normal_f32() { return static_cast<float>(normal()); }

  uint64_t seed() const { return seed_; }

 private:
  uint64_t seed_;
  std::array<uint64_t, 4> s_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Dense 4-D float volume, row-major in (t, h, w, c).
/// Values are validated finite on construction and immutable-by-convention
/// afterwards; share read-only across threads.
struct LatentVolume {
  uint32_t t = 0, h = 0, w = 0, c = 0;
  std::vector<float> data;

  LatentVolume() = default;
  LatentVolume(uint32_t t, uint32_t h, uint32_t w, uint32_t c);
  LatentVolume(uint32_t t, uint32_t h, uint32_t w, uint32_t c,
               std::vector<float> values);

  size_t size() const { return data.size(); }

  size_t index(uint32_t ti, uint32_t hi, uint32_t wi, uint32_t ci) const {
    return ((static_cast<size_t>(ti) * h + hi) * w + wi) * c + ci;
  }
  float& at(uint32_t ti, uint32_t hi, uint32_t wi, uint32_t ci) {
    return data[index(ti, hi, wi, ci)];
  }
  const float& at(uint32_t ti, uint32_t hi, uint32_t wi, uint32_t ci) const {
    return data[index(ti, hi, wi, ci)];
  }

  bool operator==(const LatentVolume&) const = default;
};

/// I.i.d. standard-normal volume; deterministic given the generator state.
LatentVolume gaussian_volume(uint32_t t, uint32_t h, uint32_t w, uint32_t c,
                             Rng& rng);

/// Trilinear resize over (t, h, w), independently per channel,
/// align-corners-false convention. Resizing to the source dims returns a
/// bit-identical copy.
LatentVolume resize_volume(const LatentVolume& z, uint32_t s_t, uint32_t s_h,
                           uint32_t s_w);

// Reductions accumulate in double.
double l2_norm(std::span<const float> v);
double mean_of(std::span<const float> v);
double variance_of(std::span<const float> v);

// Latent file format: magic "VLAT", u16 version = 1, four LE u32 dims
// (t, h, w, c), then t*h*w*c LE f32 payload. Bit-exact round trip.
void write_latent(const LatentVolume& z, const std::string& path);
LatentVolume read_latent(const std::string& path);
std::vector<uint8_t> latent_to_bytes(const LatentVolume& z);
LatentVolume latent_from_bytes(std::span<const uint8_t> bytes);

}  // namespace unitar
