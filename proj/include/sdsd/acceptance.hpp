#pragma once

#include <string>
#include <vector>

#include "sdsd/oracle.hpp"

namespace sdsd {

/* Release checks. Each criterion is self-contained, seeded from a base seed
 * fixed ahead of any tuning, and reports one line. Identity-level checks run
 * at tight tolerances; statistical reproductions state their thresholds in
 * the detail string. */

struct CriterionResult {
  int id = 0;
  std::string name;
  bool pass = false;
  std::string detail;
  double seconds = 0;
};

struct AcceptanceOptions {
  uint64_t base_seed = 42;
  /* Reduced draw counts for a fast smoke pass. The statistical criteria lose
   * their power at these counts, so quick results are not a release signal. */
  bool quick = false;
};

inline constexpr int kNumCriteria = 10;

CriterionResult run_criterion(int id, const AcceptanceOptions& opt);
std::vector<CriterionResult> run_all_criteria(const AcceptanceOptions& opt);
std::string criterion_line(const CriterionResult& r);

// reference anchors shared by the criteria, computed once per process on the
// default configuration
const OracleReference& acceptance_reference();

}  // namespace sdsd
