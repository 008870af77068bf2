#pragma once

#include <functional>
#include <string>
#include <vector>

#include "adat/tensor.hpp"

namespace adat {

struct GradReport {
  double max_rel_error = 0.0;
  bool pass = false;
  double tolerance = 0.0;
  std::string note;  // failure context, empty when clean
};

// Builds a scalar-valued forward pass from the given leaf tensors. Must be
// deterministic: called repeatedly with perturbed copies of the inputs.
using GraphBuilder = std::function<Tensor(Graph&, const std::vector<Tensor>&)>;

// Compares reverse-mode gradients of `builder` against central finite
// differences with step 1e-5. Relative error uses the denominator
// max(|analytic|, |numeric|, 1e-8). Non-finite values or exceptions during
// probing yield a failing report rather than propagating.
GradReport grad_check(const GraphBuilder& builder, const std::vector<TensorData>& inputs,
                      double tol);

}  // namespace adat
