// SPDX-License-Identifier: Apache-2.0
#include "unitar/parse.hpp"

#include <charconv>

#include "unitar/errors.hpp"

namespace unitar {

namespace {

uint32_t parse_u32_at(std::string_view spec, size_t& pos, const char* what) {
  if (pos >= spec.size())
    throw ParseError(std::string("expected ") + what + ", found end of input",
                     pos);
  uint32_t value = 0;
  const char* begin = spec.data() + pos;
  const char* end = spec.data() + spec.size();
  const auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc{} || ptr == begin)
    throw ParseError(std::string("expected ") + what, pos);
  pos = static_cast<size_t>(ptr - spec.data());
  return value;
}

void expect_char(std::string_view spec, size_t& pos, char c) {
  if (pos >= spec.size() || spec[pos] != c)
    throw ParseError(std::string("expected '") + c + "'", pos);
  ++pos;
}

void expect_end(std::string_view spec, size_t pos) {
  if (pos != spec.size())
    throw ParseError("trailing characters after scheme spec", pos);
}

}  // namespace

UnitScheme parse_scheme(std::string_view spec) {
  const size_t colon = spec.find(':');
  const std::string_view tag = spec.substr(0, colon);
  size_t pos = colon == std::string_view::npos ? spec.size() : colon;

  if (tag == "frame") {
    expect_end(spec, pos);
    return FrameScheme{};
  }
  if (tag == "keydetail") {
    expect_char(spec, pos, ':');
    const size_t k_pos = pos;
    KeyDetailScheme kd;
    kd.k = parse_u32_at(spec, pos, "interval k");
    if (kd.k < 2) throw ParseError("keydetail interval k must be >= 2", k_pos);
    expect_end(spec, pos);
    return kd;
  }
  if (tag == "cube") {
    expect_char(spec, pos, ':');
    CubeScheme cu;
    const size_t t_pos = pos;
    cu.k_t = parse_u32_at(spec, pos, "cube k_t");
    expect_char(spec, pos, ',');
    const size_t h_pos = pos;
    cu.k_h = parse_u32_at(spec, pos, "cube k_h");
    expect_char(spec, pos, ',');
    const size_t w_pos = pos;
    cu.k_w = parse_u32_at(spec, pos, "cube k_w");
    if (cu.k_t == 0) throw ParseError("cube k_t must be >= 1", t_pos);
    if (cu.k_h == 0) throw ParseError("cube k_h must be >= 1", h_pos);
    if (cu.k_w == 0) throw ParseError("cube k_w must be >= 1", w_pos);
    expect_end(spec, pos);
    return cu;
  }
  if (tag == "multiscale") {
    expect_char(spec, pos, ':');
    MultiscaleScheme ms;
    while (true) {
      std::array<uint32_t, 3> scale{};
      const size_t s_pos = pos;
      scale[0] = parse_u32_at(spec, pos, "scale t");
      expect_char(spec, pos, ',');
      scale[1] = parse_u32_at(spec, pos, "scale h");
      expect_char(spec, pos, ',');
      scale[2] = parse_u32_at(spec, pos, "scale w");
      if (scale[0] == 0 || scale[1] == 0 || scale[2] == 0)
        throw ParseError("scale dims must be >= 1", s_pos);
      ms.scales.push_back(scale);
      if (pos == spec.size()) break;
      expect_char(spec, pos, ';');
    }
    return ms;
  }
  throw ParseError("unknown scheme tag '" + std::string(tag) +
                       "' (expected frame, keydetail, cube, or multiscale)",
                   0);
}

std::array<uint32_t, 4> parse_dims(std::string_view spec) {
  std::array<uint32_t, 4> dims{};
  size_t pos = 0;
  static constexpr const char* kNames[4] = {"t", "h", "w", "c"};
  for (int i = 0; i < 4; ++i) {
    if (i > 0) expect_char(spec, pos, ',');
    const size_t d_pos = pos;
    dims[i] = parse_u32_at(spec, pos, kNames[i]);
    if (dims[i] == 0)
      throw ParseError(std::string("dim ") + kNames[i] + " must be >= 1",
                       d_pos);
  }
  expect_end(spec, pos);
  return dims;
}

}  // namespace unitar
