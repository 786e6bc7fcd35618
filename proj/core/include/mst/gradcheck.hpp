#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mst/graph.hpp"

namespace mst {

/// Scalar-valued composite under test. Receives the graph and one leaf Var
/// per input tensor, in order.
using ScalarFn = std::function<Var(Graph&, std::span<const Var>)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

inline constexpr double kGradCheckStep = 1e-5;

/// Compares reverse-mode gradients of `f` against central differences
/// (f(x+h) - f(x-h)) / 2h for every element of every leaf. Relative error is
/// |a - n| / max(1, |a|, |n|). Throws DimensionError if `f` is not scalar.
GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& leaves, double h = kGradCheckStep);

/// Same comparison for parameters bound inside `f`. Values are perturbed in
/// place and restored; `worst_leaf` indexes `params`.
GradCheckResult grad_check_params(const std::function<Var(Graph&)>& f, std::span<Parameter* const> params,
                                  double h = kGradCheckStep);

/// A named check from the built-in suite.
struct GradCheckCase {
  std::string name;
  std::string scope;  // "ops", "attention", "layers" or "model"
  double tolerance = 1e-4;
  std::function<GradCheckResult()> run;
};

/// Every op and both layer types on small random double-precision inputs,
/// plus end-to-end models. Deterministic.
std::vector<GradCheckCase> gradcheck_suite();

}  // namespace mst
