// SPDX-License-Identifier: Apache-2.0
#include "unitar/parse.hpp"

#include "doctest.h"
#include "unitar/errors.hpp"

using namespace unitar;

TEST_SUITE_BEGIN("parse");

TEST_CASE("scheme specs parse to the right variants") {
  CHECK(std::holds_alternative<FrameScheme>(parse_scheme("frame")));

  const auto kd = std::get<KeyDetailScheme>(parse_scheme("keydetail:4"));
  CHECK(kd.k == 4);

  const auto cu = std::get<CubeScheme>(parse_scheme("cube:2,4,4"));
  CHECK(cu.k_t == 2);
  CHECK(cu.k_h == 4);
  CHECK(cu.k_w == 4);

  const auto ms =
      std::get<MultiscaleScheme>(parse_scheme("multiscale:1,1,1;2,2,2"));
  REQUIRE(ms.scales.size() == 2);
  CHECK(ms.scales[0] == std::array<uint32_t, 3>{1, 1, 1});
  CHECK(ms.scales[1] == std::array<uint32_t, 3>{2, 2, 2});
}

TEST_CASE("round trip through scheme_to_string") {
  for (const char* spec :
       {"frame", "keydetail:2", "cube:1,2,2", "multiscale:1,1,1;2,2,2;4,4,4"}) {
    CHECK(scheme_to_string(parse_scheme(spec)) == spec);
  }
}

TEST_CASE("keydetail interval below 2 is a parse error") {
  try {
    parse_scheme("keydetail:0");
    FAIL("expected ParseError");
  } catch (const ParseError& err) {
    CHECK(err.offset() == 10);  // offset of the '0'
  }
  CHECK_THROWS_AS(parse_scheme("keydetail:1"), ParseError);
}

TEST_CASE("malformed specs report the offending offset") {
  try {
    parse_scheme("cube:2,x,4");
    FAIL("expected ParseError");
  } catch (const ParseError& err) {
    CHECK(err.offset() == 7);
  }
  try {
    parse_scheme("frame:extra");
    FAIL("expected ParseError");
  } catch (const ParseError& err) {
    CHECK(err.offset() == 5);
  }
  try {
    parse_scheme("cube:2,4,4trailing");
    FAIL("expected ParseError");
  } catch (const ParseError& err) {
    CHECK(err.offset() == 10);
  }
  CHECK_THROWS_AS(parse_scheme("lattice:3"), ParseError);
  CHECK_THROWS_AS(parse_scheme("multiscale:1,1;2,2,2"), ParseError);
  CHECK_THROWS_AS(parse_scheme("cube:0,2,2"), ParseError);
}

TEST_CASE("dims strings") {
  CHECK(parse_dims("4,4,4,2") == std::array<uint32_t, 4>{4, 4, 4, 2});
  CHECK_THROWS_AS(parse_dims("4,4,4"), ParseError);
  CHECK_THROWS_AS(parse_dims("4,4,4,0"), ParseError);
  CHECK_THROWS_AS(parse_dims("4,4,4,2,9"), ParseError);
}

TEST_SUITE_END();
