// Prints one PASS/FAIL line per acceptance criterion; exits non-zero when
// any fails. Usage: acceptance [work_dir]
#include <iostream>

#include "hgen/checks.hpp"

int main(int argc, char** argv) {
  hgen::checks::SuiteOptions opts;
  if (argc > 1) opts.work_dir = argv[1];
  int failed = 0;
  hgen::checks::run_suite(opts, [&failed](const hgen::checks::CheckResult& r) {
    failed += !r.passed;
    std::cout << hgen::checks::format_result(r) << std::endl;
  });
  std::cout << (failed ? std::to_string(failed) + " criteria failed" : std::string("all criteria passed")) << std::endl;
  return failed ? 1 : 0;
}
