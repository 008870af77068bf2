#include "adat/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace adat {

namespace {

constexpr double kStep = 1e-5;

double eval_scalar(const GraphBuilder& builder, const std::vector<TensorData>& inputs) {
  Graph g;
  std::vector<Tensor> leaves;
  leaves.reserve(inputs.size());
  for (const TensorData& in : inputs) leaves.push_back(g.leaf(in, false));
  Tensor root = builder(g, leaves);
  if (root.size() != 1) throw std::invalid_argument("grad_check: builder must return a scalar");
  return root.values()[0];
}

}  // namespace

GradReport grad_check(const GraphBuilder& builder, const std::vector<TensorData>& inputs,
                      double tol) {
  GradReport report;
  report.tolerance = tol;
  try {
    // Analytic pass.
    Graph g;
    std::vector<Tensor> leaves;
    leaves.reserve(inputs.size());
    for (const TensorData& in : inputs) leaves.push_back(g.leaf(in, true));
    Tensor root = builder(g, leaves);
    if (root.size() != 1) throw std::invalid_argument("grad_check: builder must return a scalar");
    g.backward(root);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (const Tensor& leaf : leaves) analytic.push_back(g.grad_of(leaf));

    // Central differences per input element.
    double worst = 0.0;
    std::vector<TensorData> probe = inputs;
    for (std::size_t t = 0; t < probe.size(); ++t) {
      for (std::size_t i = 0; i < probe[t].values.size(); ++i) {
        const double saved = probe[t].values[i];
        probe[t].values[i] = saved + kStep;
        const double up = eval_scalar(builder, probe);
        probe[t].values[i] = saved - kStep;
        const double down = eval_scalar(builder, probe);
        probe[t].values[i] = saved;
        const double numeric = (up - down) / (2.0 * kStep);
        const double a = analytic[t][i];
        if (!std::isfinite(numeric) || !std::isfinite(a)) {
          report.note = "non-finite gradient while probing input " + std::to_string(t);
          report.max_rel_error = std::numeric_limits<double>::infinity();
          report.pass = false;
          return report;
        }
        const double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-8});
        worst = std::max(worst, std::fabs(a - numeric) / denom);
      }
    }
    report.max_rel_error = worst;
    report.pass = worst <= tol;
  } catch (const std::exception& e) {
    report.note = e.what();
    report.max_rel_error = std::numeric_limits<double>::infinity();
    report.pass = false;
  }
  return report;
}

}  // namespace adat
