#pragma once

#include <functional>
#include <string>
#include <vector>

#include "actbridge/param_store.hpp"

namespace actbridge {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked_coords = 0;
  bool ok(double tol) const { return max_rel_err < tol; }
};

// Central-difference validation of reverse-mode gradients. `f` must be a
// deterministic scalar function of the store's current values (the graph
// is rebuilt on every call). Coordinates are subsampled (at most
// `max_coords` per tensor, seeded) to bound runtime.
GradCheckReport finite_diff_grad_check(
    const std::function<Tensor()>& f, ParameterStore& store, double h = 1e-5,
    std::size_t max_coords = 64, std::uint64_t seed = 0);

struct SuiteEntry {
  std::string name;
  GradCheckReport report;
  double tol = 1e-4;
  bool ok() const { return report.ok(tol); }
};

// The full validation sweep: every differentiable primitive plus one
// end-to-end block per policy variant (standard, Pro, diffusion), each
// scalarized through a fixed random weighting so the objective is smooth.
std::vector<SuiteEntry> gradient_suite();

}  // namespace actbridge
