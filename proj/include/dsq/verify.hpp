#pragma once

#include <string>
#include <vector>

namespace dsq::verify {

struct VerifyItem {
  std::string name;
  bool passed = false;
  double value = 0;      // measured deviation or margin
  double tolerance = 0;  // bound it is held to (0 for boolean checks)
  std::string note;
};

struct VerifyReport {
  std::vector<VerifyItem> items;
  bool all_passed = true;

  void add(VerifyItem item) {
    all_passed &= item.passed;
    items.push_back(std::move(item));
  }
};

// Desk-scale verification: oracle equivalence across compressors, the
// closed-form unrolling, gossip consensus decay, the mean-iterate law, the
// identity reductions, the theory cross-parametrization, and the pathwise
// lemma monitors.
VerifyReport verify_desk(std::uint64_t seed = 7);

std::string verify_csv(const VerifyReport& report);

// Prints a theory-constants table and the check report; optionally writes the
// report as CSV.  Returns 0, or 3 on any failed check.
int cmd_verify(std::uint64_t seed = 7, const std::string& csv_path = "");

}  // namespace dsq::verify
