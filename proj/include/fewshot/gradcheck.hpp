#pragma once

// Finite-difference gradient checking. Analytic backward passes are compared
// to central differences in 64-bit arithmetic. Coordinates whose +/- step
// evaluations land on different sides of a non-smooth point (PReLU kink,
// max-pool argmax flip) are excluded via a forward "signature".

#include <functional>
#include <string>
#include <vector>

#include "fewshot/rng.hpp"

namespace fewshot {

struct GradCheckArray {
  std::string name;
  double* data;
  std::size_t len;
};

struct GradCheckProblem {
  std::vector<GradCheckArray> arrays;
  // forward(); appends non-smoothness markers to *signature when non-null
  std::function<std::vector<double>(std::vector<int>* signature)> forward;
  // grads of dot(gout, forward()) wrt each array, in array order
  std::function<std::vector<std::vector<double>>(
      const std::vector<double>& gout)>
      backward;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_coordinate;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates straddling a kink
};

GradCheckReport run_gradcheck(GradCheckProblem& problem, Rng& rng,
                              double step = 1e-3);

// Registry of per-operation checks. Returns the worst relative error
// |a - n| / max(|a|, |n|, 1e-8). Unknown ids raise.
double gradcheck(const std::string& op_id, std::uint64_t seed = 1);

GradCheckReport gradcheck_report(const std::string& op_id,
                                 std::uint64_t seed = 1, double step = 1e-3);

// Every primitive and composite the default suite covers (the deliberately
// corrupted detector-sanity fixture is registered but not listed here).
std::vector<std::string> gradcheck_default_suite();

}  // namespace fewshot
