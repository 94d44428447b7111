// SPDX-License-Identifier: Apache-2.0
#include "unitar/mask.hpp"

#include <stdexcept>

#include "doctest.h"
#include "helpers.hpp"

using namespace unitar;

namespace {

UnitLayout make_layout(std::vector<uint32_t> tokens) {
  UnitLayout lay;
  lay.tokens_per_unit = std::move(tokens);
  lay.offsets.push_back(0);
  for (uint32_t t : lay.tokens_per_unit)
    lay.offsets.push_back(lay.offsets.back() + t);
  lay.total_tokens = lay.offsets.back();
  return lay;
}

}  // namespace

TEST_SUITE_BEGIN("mask");

TEST_CASE("one token per unit reduces forward to the causal triangle") {
  const AttentionMask m = build_mask(make_layout({1, 1, 1}), MaskDirection::Forward);
  REQUIRE(m.n_tokens == 3);
  for (uint32_t q = 0; q < 3; ++q)
    for (uint32_t k = 0; k < 3; ++k) CHECK(m.at(q, k) == (k <= q));
}

TEST_CASE("backward mask on layout [2,2], enumerated by hand") {
  const AttentionMask m = build_mask(make_layout({2, 2}), MaskDirection::Backward);
  // queries in unit 0 (tokens 0,1) see everything; queries in unit 1
  // (tokens 2,3) see only tokens 2,3
  const bool expect[4][4] = {{true, true, true, true},
                             {true, true, true, true},
                             {false, false, true, true},
                             {false, false, true, true}};
  for (uint32_t q = 0; q < 4; ++q)
    for (uint32_t k = 0; k < 4; ++k) CHECK(m.at(q, k) == expect[q][k]);
}

TEST_CASE("full mask is all-true") {
  const AttentionMask m = build_mask(make_layout({3, 1, 2}), MaskDirection::Full);
  for (uint32_t q = 0; q < m.n_tokens; ++q)
    for (uint32_t k = 0; k < m.n_tokens; ++k) CHECK(m.at(q, k));
}

TEST_CASE("zero-token layout rejected") {
  CHECK_THROWS_AS(build_mask(UnitLayout{}, MaskDirection::Forward),
                  std::invalid_argument);
}

TEST_CASE("verify_causality: built masks come back clean") {
  for (auto dir : {MaskDirection::Forward, MaskDirection::Backward,
                   MaskDirection::Full}) {
    const AttentionMask m = build_mask(make_layout({2, 3, 1}), dir);
    CHECK(verify_causality(m, dir).clean);
  }
}

TEST_CASE("verify_causality: a leaked future key is pinpointed") {
  AttentionMask m = build_mask(make_layout({1, 1}), MaskDirection::Forward);
  m.allowed[0 * 2 + 1] = 1;  // query 0 (unit 0) attends key 1 (unit 1)
  const CausalityReport rep = verify_causality(m, MaskDirection::Forward);
  REQUIRE(!rep.clean);
  CHECK(rep.q == 0);
  CHECK(rep.k == 1);
}

TEST_CASE("verify_causality: full mask fails the forward invariant") {
  const AttentionMask m = build_mask(make_layout({2, 2}), MaskDirection::Full);
  CHECK(!verify_causality(m, MaskDirection::Forward).clean);
}

TEST_CASE("reverse of the triangular mask is its transpose") {
  const AttentionMask fwd =
      build_mask(make_layout({1, 1, 1}), MaskDirection::Forward);
  const AttentionMask rev = reverse_mask(fwd);
  for (uint32_t q = 0; q < 3; ++q)
    for (uint32_t k = 0; k < 3; ++k) CHECK(rev.at(q, k) == fwd.at(k, q));
}

TEST_CASE("reverse exchanges forward and backward") {
  const UnitLayout lay = make_layout({2, 2});
  const AttentionMask fwd = build_mask(lay, MaskDirection::Forward);
  const AttentionMask bwd = build_mask(lay, MaskDirection::Backward);
  CHECK(reverse_mask(fwd).allowed == bwd.allowed);
  CHECK(reverse_mask(bwd).allowed == fwd.allowed);
}

TEST_CASE("reverse is an involution") {
  const AttentionMask m = build_mask(make_layout({1, 3, 2}), MaskDirection::Forward);
  const AttentionMask twice = reverse_mask(reverse_mask(m));
  CHECK(twice.allowed == m.allowed);
  CHECK(twice.unit_of_token == m.unit_of_token);
  CHECK(twice.dir == m.dir);
}

TEST_CASE("forward/backward exchange holds across random layouts up to 64 units") {
  Rng rng(31);
  for (int trial = 0; trial < 25; ++trial) {
    const uint32_t n_units = 1 + static_cast<uint32_t>(rng.uniform() * 64);
    std::vector<uint32_t> tokens(n_units);
    for (auto& t : tokens) t = 1 + static_cast<uint32_t>(rng.uniform() * 4);
    const UnitLayout lay = make_layout(tokens);
    const AttentionMask fwd = build_mask(lay, MaskDirection::Forward);
    const AttentionMask bwd = build_mask(lay, MaskDirection::Backward);
    CHECK(reverse_mask(fwd).allowed == bwd.allowed);
    CHECK(verify_causality(fwd, MaskDirection::Forward).clean);
    CHECK(verify_causality(bwd, MaskDirection::Backward).clean);
    // every row has at least one allowed key
    for (uint32_t q = 0; q < fwd.n_tokens; ++q) {
      bool any = false;
      for (uint32_t k = 0; k < fwd.n_tokens && !any; ++k) any = fwd.at(q, k);
      CHECK(any);
    }
  }
}

TEST_CASE("mask construction is deterministic") {
  const UnitLayout lay = make_layout({2, 1, 3});
  const AttentionMask a = build_mask(lay, MaskDirection::Forward);
  const AttentionMask b = build_mask(lay, MaskDirection::Forward);
  CHECK(a.allowed == b.allowed);
  CHECK(a.unit_of_token == b.unit_of_token);
}

TEST_CASE("text and pgm dumps") {
  const AttentionMask m = build_mask(make_layout({1, 1}), MaskDirection::Forward);
  CHECK(mask_to_text(m) == "10\n11\n");
  const auto pgm = mask_to_pgm(m);
  const std::string header(pgm.begin(), pgm.begin() + 3);
  CHECK(header == "P5\n");
  CHECK(pgm.size() == 11 + 4);  // "P5\n2 2\n255\n" + 4 pixels
}

TEST_SUITE_END();
