// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string_view>

#include "unitar/units.hpp"

namespace unitar {

/// Strict scheme-spec grammar:
///   frame | keydetail:k | cube:kt,kh,kw | multiscale:t1,h1,w1;t2,h2,w2;...
/// Trailing garbage is rejected; ParseError carries the byte offset.
/// Divisibility against actual dims is checked later, at partition time.
UnitScheme parse_scheme(std::string_view spec);

/// "t,h,w,c" with four positive integers.
std::array<uint32_t, 4> parse_dims(std::string_view spec);

}  // namespace unitar
