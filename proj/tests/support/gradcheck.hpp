#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "milpool/tensor.hpp"

namespace testsupport {

// Central-finite-difference gradient oracle. `build` must reconstruct the
// graph from the leaves' current values and return the scalar loss; the
// analytic gradients from one backward sweep are compared element by element
// against (f(x+h) - f(x-h)) / 2h. Returns the worst relative error
// |analytic - numeric| / max(1, |numeric|).
inline double max_grad_rel_error(std::vector<milpool::Tensor> leaves,
                                 const std::function<milpool::Tensor()>& build,
                                 double h = 1e-5) {
    using milpool::Tensor;
    for (auto& leaf : leaves) leaf.zero_grad();
    Tensor loss = build();
    milpool::backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(leaves.size());
    for (auto& leaf : leaves) analytic.push_back(leaf.grad());

    double worst = 0.0;
    for (std::size_t li = 0; li < leaves.size(); ++li) {
        auto& vals = leaves[li].mutable_values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            vals[i] = orig + h;
            const double fp = build().value();
            vals[i] = orig - h;
            const double fm = build().value();
            vals[i] = orig;
            const double numeric = (fp - fm) / (2.0 * h);
            const double rel = std::fabs(analytic[li][i] - numeric) /
                               std::max(1.0, std::fabs(numeric));
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

}  // namespace testsupport
