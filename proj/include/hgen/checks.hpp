#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hgen/config.hpp"

// The acceptance suite: nine numbered properties shared by `hgen selftest`
// and the acceptance test binary. Criteria 1-4 are self-contained; 5-9 run
// the toy pipeline (twice, for determinism) under a scratch directory.
namespace hgen::checks {

struct CheckResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// "[PASS] 3 geometry (1.2 s): detail"
std::string format_result(const CheckResult& r);

CheckResult check_losses();
CheckResult check_gradients();
CheckResult check_geometry();
CheckResult check_metrics();

struct SuiteOptions {
  fs::path work_dir;  ///< run directories for criteria 5-9 go here
  RunConfig config = RunConfig::tiny();
  bool pipeline = true;  ///< false runs criteria 1-4 only
};

/// Runs the suite in criterion order, calling `report` as each result is
/// known. A criterion that throws is reported as failed with the message.
std::vector<CheckResult> run_suite(const SuiteOptions& options,
                                   const std::function<void(const CheckResult&)>& report = {});

}  // namespace hgen::checks
