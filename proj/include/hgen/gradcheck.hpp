#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hgen/autograd.hpp"
#include "hgen/rng.hpp"

namespace hgen {

struct GradCheckResult {
  double max_rel_error = 0.0;
  int probes = 0;
  std::string worst;  ///< "<leaf>[<index>]: analytic a, numeric n"
};

/// Compares reverse-mode gradients of the scalar `loss()` against central
/// differences on `probes` randomly chosen entries spread over `leaves`.
/// Relative error is |a - n| / max(|a|, |n|, floor).
GradCheckResult gradient_check(const std::function<ag::Var()>& loss, const std::vector<ag::Var>& leaves, int probes,
                               Rng& rng, double step = 1e-4, double floor = 1e-6);

}  // namespace hgen
