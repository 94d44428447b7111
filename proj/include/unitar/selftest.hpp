// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace unitar::selftest {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0.0;
};

struct Options {
  bool full = false;  // full acceptance strength vs reduced selftest
};

/// Run the invariant suite, one check per acceptance criterion, printing a
/// pass/fail line per check as it completes.
std::vector<CheckResult> run_checks(const Options& opts, std::ostream& out);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace unitar::selftest
