#pragma once

#include <functional>

#include "jpfa/tensor.hpp"

namespace jpfa {

// Compares the analytic gradient of builder(point) against central finite
// differences. builder must map a leaf tensor to a single-element loss and
// be deterministic. Returns the max over components of
//   |analytic - numeric| / max(1, |analytic|).
// Any non-finite value encountered yields +infinity rather than a throw, so
// callers can treat it as a failed check.
double gradient_check(const std::function<Tensor(const Tensor&)>& builder,
                      const Tensor& point, double eps = 1e-4);

}  // namespace jpfa
