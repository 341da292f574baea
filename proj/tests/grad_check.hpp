#pragma once

// Central finite-difference gradient checking against the reverse-mode tape.
// The forward functor must rebuild the graph from the given leaf tensors on
// every call, so value perturbations take effect.

#include <cmath>
#include <functional>
#include <vector>

#include "ggalign/tensor.hpp"

namespace ggtest {

struct GradCheckResult {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    bool ok(double tol) const { return max_rel_err < tol; }
};

// Checks d(forward())/d(leaf) for every leaf, h = 1e-4 by default. Components
// whose absolute error is below `atol` count as matching regardless of their
// relative error (finite differences bottom out near zero gradients).
inline GradCheckResult grad_check(const std::function<ggalign::Tensor()>& forward,
                                  std::vector<ggalign::Tensor> leaves,
                                  double h = 1e-4, double atol = 1e-8) {
    GradCheckResult res;
    ggalign::Tensor loss = forward();
    loss.backward();
    std::vector<std::vector<double>> analytic;
    for (auto& leaf : leaves) analytic.push_back(leaf.grad());

    for (std::size_t l = 0; l < leaves.size(); ++l) {
        auto& vals = leaves[l].values();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            double keep = vals[i];
            vals[i] = keep + h;
            double up = forward().item();
            vals[i] = keep - h;
            double down = forward().item();
            vals[i] = keep;
            double numeric = (up - down) / (2.0 * h);
            double a = analytic[l][i];
            double abs_err = std::abs(a - numeric);
            double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
            res.max_abs_err = std::max(res.max_abs_err, abs_err);
            if (abs_err > atol)
                res.max_rel_err = std::max(res.max_rel_err, abs_err / denom);
        }
    }
    return res;
}

}  // namespace ggtest
