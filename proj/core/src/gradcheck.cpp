#include "mst/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "mst/error.hpp"

namespace mst {

namespace {

double evaluate(const ScalarFn& f, const std::vector<Tensor>& leaves) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(leaves.size());
  for (const auto& t : leaves) vars.push_back(g.input(t, false));
  Var out = f(g, vars);
  if (out.value().size() != 1) {
    throw DimensionError("grad_check: function output must be scalar, got " + shape_string(out.shape()));
  }
  return out.value()[0];
}

}  // namespace

GradCheckResult grad_check(const ScalarFn& f, const std::vector<Tensor>& leaves, double h) {
  Graph g;
  std::vector<Var> vars;
  vars.reserve(leaves.size());
  for (const auto& t : leaves) vars.push_back(g.input(t, true));
  Var out = f(g, vars);
  if (out.value().size() != 1) {
    throw DimensionError("grad_check: function output must be scalar, got " + shape_string(out.shape()));
  }
  g.backward(out);

  GradCheckResult result;
  std::vector<Tensor> probe = leaves;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    const Tensor analytic = vars[l].grad();
    for (std::size_t i = 0; i < leaves[l].size(); ++i) {
      const double x0 = leaves[l][i];
      probe[l][i] = x0 + h;
      const double fp = evaluate(f, probe);
      probe[l][i] = x0 - h;
      const double fm = evaluate(f, probe);
      probe[l][i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err > result.max_rel_error || std::isnan(err)) {
        result = {std::isnan(err) ? INFINITY : err, l, i, a, numeric};
      }
    }
  }
  return result;
}

GradCheckResult grad_check_params(const std::function<Var(Graph&)>& f, std::span<Parameter* const> params,
                                  double h) {
  const auto value_of = [&] {
    Graph g;
    Var out = f(g);
    if (out.value().size() != 1) {
      throw DimensionError("grad_check_params: function output must be scalar, got " + shape_string(out.shape()));
    }
    return out.value()[0];
  };
  Graph g;
  Var out = f(g);
  if (out.value().size() != 1) {
    throw DimensionError("grad_check_params: function output must be scalar, got " + shape_string(out.shape()));
  }
  g.backward(out);
  std::vector<Tensor> analytic;
  for (const Parameter* p : params) {
    const Tensor* gr = g.param_grad(*p);
    analytic.push_back(gr ? *gr : Tensor(p->value.shape()));
  }

  GradCheckResult result;
  for (std::size_t l = 0; l < params.size(); ++l) {
    Tensor& value = params[l]->value;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double x0 = value[i];
      value[i] = x0 + h;
      const double fp = value_of();
      value[i] = x0 - h;
      const double fm = value_of();
      value[i] = x0;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[l][i];
      const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
      if (err > result.max_rel_error || std::isnan(err)) {
        result = {std::isnan(err) ? INFINITY : err, l, i, a, numeric};
      }
    }
  }
  return result;
}

}  // namespace mst
