// SPDX-License-Identifier: Apache-2.0
#include "unitar/mask.hpp"

#include <algorithm>
#include <stdexcept>

namespace unitar {

std::string direction_name(MaskDirection d) {
  switch (d) {
    case MaskDirection::Forward:
      return "forward";
    case MaskDirection::Backward:
      return "backward";
    case MaskDirection::Full:
      return "full";
  }
  return "?";
}

uint32_t AttentionMask::n_units() const {
  if (unit_of_token.empty()) return 0;
  return *std::max_element(unit_of_token.begin(), unit_of_token.end()) + 1;
}

namespace {

bool pair_allowed(MaskDirection dir, uint32_t unit_q, uint32_t unit_k) {
  switch (dir) {
    case MaskDirection::Forward:
      return unit_k <= unit_q;
    case MaskDirection::Backward:
      return unit_k >= unit_q;
    case MaskDirection::Full:
      return true;
  }
  return false;
}

AttentionMask build_from_units(std::vector<uint32_t> unit_of_token,
                               MaskDirection dir) {
  AttentionMask m;
  m.n_tokens = static_cast<uint32_t>(unit_of_token.size());
  m.dir = dir;
  m.unit_of_token = std::move(unit_of_token);
  m.allowed.assign(static_cast<size_t>(m.n_tokens) * m.n_tokens, 0);
  for (uint32_t q = 0; q < m.n_tokens; ++q) {
    const uint32_t uq = m.unit_of_token[q];
    uint8_t* row = m.allowed.data() + static_cast<size_t>(q) * m.n_tokens;
    for (uint32_t k = 0; k < m.n_tokens; ++k)
      row[k] = pair_allowed(dir, uq, m.unit_of_token[k]) ? 1 : 0;
  }
  return m;
}

}  // namespace

AttentionMask build_mask(const UnitLayout& layout, MaskDirection dir) {
  if (layout.total_tokens == 0)
    throw std::invalid_argument("cannot build a mask over zero tokens");
  std::vector<uint32_t> unit_of_token(layout.total_tokens);
  for (uint32_t u = 0; u < layout.tokens_per_unit.size(); ++u)
    for (uint32_t t = layout.offsets[u]; t < layout.offsets[u + 1]; ++t)
      unit_of_token[t] = u;
  return build_from_units(std::move(unit_of_token), dir);
}

CausalityReport verify_causality(const AttentionMask& mask, MaskDirection dir) {
  for (uint32_t q = 0; q < mask.n_tokens; ++q) {
    for (uint32_t k = 0; k < mask.n_tokens; ++k) {
      const bool want =
          pair_allowed(dir, mask.unit_of_token[q], mask.unit_of_token[k]);
      const bool got = mask.at(q, k);
      if (want != got) {
        CausalityReport rep;
        rep.clean = false;
        rep.q = q;
        rep.k = k;
        rep.detail = "query " + std::to_string(q) + " (unit " +
                     std::to_string(mask.unit_of_token[q]) + ") vs key " +
                     std::to_string(k) + " (unit " +
                     std::to_string(mask.unit_of_token[k]) + "): " +
                     (got ? "allowed" : "blocked") + " but " +
                     direction_name(dir) + " requires the opposite";
        return rep;
      }
    }
  }
  return {};
}

AttentionMask reverse_mask(const AttentionMask& mask) {
  const uint32_t n_units = mask.n_units();
  std::vector<uint32_t> relabeled(mask.unit_of_token.size());
  for (size_t t = 0; t < relabeled.size(); ++t)
    relabeled[t] = n_units - 1 - mask.unit_of_token[t];
  return build_from_units(std::move(relabeled), mask.dir);
}

std::string mask_to_text(const AttentionMask& mask) {
  std::string out;
  out.reserve((static_cast<size_t>(mask.n_tokens) + 1) * mask.n_tokens);
  for (uint32_t q = 0; q < mask.n_tokens; ++q) {
    for (uint32_t k = 0; k < mask.n_tokens; ++k)
      out.push_back(mask.at(q, k) ? '1' : '0');
    out.push_back('\n');
  }
  return out;
}

std::vector<uint8_t> mask_to_pgm(const AttentionMask& mask) {
  std::string header = "P5\n" + std::to_string(mask.n_tokens) + " " +
                       std::to_string(mask.n_tokens) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + mask.allowed.size());
  for (uint8_t a : mask.allowed) out.push_back(a ? 255 : 0);
  return out;
}

}  // namespace unitar
