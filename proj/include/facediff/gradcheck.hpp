#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "facediff/params.hpp"
#include "facediff/tensor.hpp"

// Central finite-difference verification of analytic gradients. `loss_fn`
// must rebuild the graph from the stores' current values and return the
// scalar loss; analytic grads are read from Parameter::grad.

namespace facediff {

template <typename Real>
struct GradCheckResult {
    bool ok = true;
    Real max_rel_err = 0;
    std::string worst;  // "param[i,j]" of the worst entry, or the failure reason
};

template <typename Real>
GradCheckResult<Real> grad_check(ParamStore<Real>& store,
                                 const std::function<Real()>& loss_fn,
                                 Real eps = Real(1e-5), Real tol = Real(1e-4)) {
    GradCheckResult<Real> res;
    for (auto& up : store.items) {
        Parameter<Real>& p = *up;
        if (!p.trainable) continue;
        for (int64_t i = 0; i < p.value.rows(); ++i) {
            for (int64_t j = 0; j < p.value.cols(); ++j) {
                Real saved = p.value.at(i, j);
                p.value.at(i, j) = saved + eps;
                Real lp = loss_fn();
                p.value.at(i, j) = saved - eps;
                Real lm = loss_fn();
                p.value.at(i, j) = saved;
                Real numeric = (lp - lm) / (2 * eps);
                Real analytic = p.grad.at(i, j);
                if (!std::isfinite(double(numeric)) || !std::isfinite(double(analytic))) {
                    res.ok = false;
                    res.worst = p.name + "[" + std::to_string(i) + "," + std::to_string(j) +
                                "]: non-finite (numeric=" + std::to_string(double(numeric)) +
                                " analytic=" + std::to_string(double(analytic)) + ")";
                    return res;
                }
                Real denom = std::max({std::abs(numeric), std::abs(analytic), Real(1e-8)});
                Real rel = std::abs(numeric - analytic) / denom;
                // Both near zero: agreement in absolute terms is enough.
                if (std::abs(numeric) < eps * eps && std::abs(analytic) < eps * eps) rel = 0;
                if (rel > res.max_rel_err) {
                    res.max_rel_err = rel;
                    res.worst = p.name + "[" + std::to_string(i) + "," + std::to_string(j) + "]";
                }
            }
        }
    }
    res.ok = res.max_rel_err <= tol;
    return res;
}

}  // namespace facediff
