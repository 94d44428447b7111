// SPDX-License-Identifier: Apache-2.0
// Shared generators and oracles for the test suites. Everything here is
// independent of the library implementation paths it checks.
#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <vector>

#include "unitar/tensor.hpp"
#include "unitar/units.hpp"

namespace testutil {

// Independent scalar trilinear interpolation oracle (align-corners-false,
// clamped borders) built from nested 1-D lerps; written before the library
// resize and kept separate from it.
inline double oracle_axis_coord(uint32_t out_i, uint32_t in_size,
                                uint32_t out_size) {
  return (out_i + 0.5) * (static_cast<double>(in_size) / out_size) - 0.5;
}

inline float oracle_trilerp(const unitar::LatentVolume& z, uint32_t ot,
                            uint32_t oh, uint32_t ow, uint32_t ci,
                            uint32_t s_t, uint32_t s_h, uint32_t s_w) {
  auto fetch = [&](double ti, double hi, double wi) -> double {
    auto clamp = [](double v, uint32_t size) -> uint32_t {
      if (v < 0.0) return 0;
      if (v > size - 1.0) return size - 1;
      return static_cast<uint32_t>(v);
    };
    return z.at(clamp(ti, z.t), clamp(hi, z.h), clamp(wi, z.w), ci);
  };
  auto lerp = [](double a, double b, double frac) {
    return a + (b - a) * frac;
  };
  const double tc = oracle_axis_coord(ot, z.t, s_t);
  const double hc = oracle_axis_coord(oh, z.h, s_h);
  const double wc = oracle_axis_coord(ow, z.w, s_w);
  const double t0 = std::floor(tc), h0 = std::floor(hc), w0 = std::floor(wc);
  const double ft = tc - t0, fh = hc - h0, fw = wc - w0;

  double corners[2][2];  // lerped along w, indexed [dt][dh]
  for (int dt = 0; dt < 2; ++dt)
    for (int dh = 0; dh < 2; ++dh)
      corners[dt][dh] = lerp(fetch(t0 + dt, h0 + dh, w0),
                             fetch(t0 + dt, h0 + dh, w0 + 1), fw);
  const double row0 = lerp(corners[0][0], corners[0][1], fh);
  const double row1 = lerp(corners[1][0], corners[1][1], fh);
  return static_cast<float>(lerp(row0, row1, ft));
}

inline bool bit_equal(const std::vector<float>& a,
                      const std::vector<float>& b) {
  return a.size() == b.size() &&
         (a.empty() ||
          std::memcmp(a.data(), b.data(), a.size() * sizeof(float)) == 0);
}

// Random valid (dims, scheme) pairs for round-trip and coverage properties.
struct SchemeCase {
  std::array<uint32_t, 4> dims;
  unitar::UnitScheme scheme;
};

inline uint32_t pick(unitar::Rng& rng, std::initializer_list<uint32_t> opts) {
  const auto idx = static_cast<size_t>(rng.uniform() * opts.size());
  return *(opts.begin() + (idx % opts.size()));
}

inline std::vector<uint32_t> divisors_of(uint32_t n) {
  std::vector<uint32_t> out;
  for (uint32_t d = 1; d <= n; ++d)
    if (n % d == 0) out.push_back(d);
  return out;
}

inline SchemeCase random_scheme_case(unitar::Rng& rng, bool allow_multiscale) {
  SchemeCase sc;
  sc.dims = {pick(rng, {2, 4, 6, 8}), pick(rng, {2, 4, 6}),
             pick(rng, {2, 4, 6}), pick(rng, {1, 2, 3})};
  const auto [t, h, w, c] = sc.dims;
  const uint32_t kind =
      pick(rng, allow_multiscale ? std::initializer_list<uint32_t>{0, 1, 2, 3}
                                 : std::initializer_list<uint32_t>{0, 1, 2});
  switch (kind) {
    case 0:
      sc.scheme = unitar::FrameScheme{};
      break;
    case 1: {
      auto divs = divisors_of(t);
      std::vector<uint32_t> ks;
      for (uint32_t d : divs)
        if (d >= 2) ks.push_back(d);
      if (ks.empty()) {
        sc.scheme = unitar::FrameScheme{};
      } else {
        sc.scheme = unitar::KeyDetailScheme{
            ks[static_cast<size_t>(rng.uniform() * ks.size()) % ks.size()]};
      }
      break;
    }
    case 2: {
      auto pick_div = [&](uint32_t n) {
        auto divs = divisors_of(n);
        return divs[static_cast<size_t>(rng.uniform() * divs.size()) %
                    divs.size()];
      };
      sc.scheme = unitar::CubeScheme{pick_div(t), pick_div(h), pick_div(w)};
      break;
    }
    default: {
      unitar::MultiscaleScheme ms;
      std::array<uint32_t, 3> base = {std::max(1u, t / 4),
                                      std::max(1u, h / 2),
                                      std::max(1u, w / 2)};
      if (base != std::array<uint32_t, 3>{t, h, w}) ms.scales.push_back(base);
      std::array<uint32_t, 3> mid = {std::max(1u, t / 2), h, w};
      if ((ms.scales.empty() || mid != ms.scales.back()) &&
          mid != std::array<uint32_t, 3>{t, h, w} &&
          (ms.scales.empty() ||
           (mid[0] >= ms.scales.back()[0] && mid[1] >= ms.scales.back()[1] &&
            mid[2] >= ms.scales.back()[2])))
        ms.scales.push_back(mid);
      ms.scales.push_back({t, h, w});
      sc.scheme = ms;
      break;
    }
  }
  return sc;
}

}  // namespace testutil
