#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "ovd/tensor.hpp"

namespace ovd {

// Forward builder: maps leaf tensors to a scalar loss. Must rebuild the
// computation from the leaves' current values on every call.
using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Compares reverse-mode gradients of `f` against central finite differences
// (f(x+eps) - f(x-eps)) / 2eps for every element of every leaf. Returns the
// maximum relative error, with |a-n| / max(|a|,|n|,1) as the measure. The
// numeric side never touches the tape, so it is independent of the backward
// implementation it checks.
double finite_diff_max_rel_err(const ScalarFn& f, std::vector<Tensor> leaves,
                               double eps = 1e-4);

// Named gradient check over seeded random instances.
struct GradSuiteEntry {
  std::string name;
  int instances;
  double max_rel_err;
  bool pass;
};

// Runs the full per-operation and composite-forward gradient suite
// (>= `instances` seeded random instances each, tolerance `tol`). Prints one
// line per entry to `out`. Returns true when everything passes.
bool run_gradient_suite(std::ostream& out, int instances = 100, double tol = 1e-4,
                        std::vector<GradSuiteEntry>* results = nullptr);

}  // namespace ovd
