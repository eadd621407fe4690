#include "hgen/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace hgen {

GradCheckResult gradient_check(const std::function<ag::Var()>& loss, const std::vector<ag::Var>& leaves, int probes,
                               Rng& rng, double step, double floor) {
  if (leaves.empty()) throw ContractError("gradient_check: no leaves");
  for (auto v : leaves) v.zero_grad();
  ag::backward(loss());
  std::vector<Tensor> analytic;
  for (const auto& v : leaves) analytic.push_back(v.grad());

  GradCheckResult r;
  for (int k = 0; k < probes; ++k) {
    const std::size_t li = rng.below(leaves.size());
    ag::Var leaf = leaves[li];
    const std::size_t idx = rng.below(leaf.size());
    double& x = leaf.mutable_value().data[idx];
    const double x0 = x;
    x = x0 + step;
    const double up = loss().item();
    x = x0 - step;
    const double down = loss().item();
    x = x0;
    const double numeric = (up - down) / (2 * step);
    const double a = analytic[li].data[idx];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    ++r.probes;
    if (rel >= r.max_rel_error) {
      r.max_rel_error = rel;
      char buf[160];
      std::snprintf(buf, sizeof(buf), "leaf %zu[%zu]: analytic %.9g, numeric %.9g", li, idx, a, numeric);
      r.worst = buf;
    }
  }
  return r;
}

}  // namespace hgen
