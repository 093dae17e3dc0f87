#pragma once

#include <functional>

#include "axialfuse/tensor.hpp"

namespace axialfuse {

struct GradcheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    size_t worst_index = 0;
};

// Central-difference check of d f / d x against the tape, in 64-bit.
// rel error per element: |a - n| / max(1, |a|, |n|).
inline GradcheckReport gradcheck(const std::function<TensorT<double>(const TensorT<double>&)>& f,
                                 const TensorT<double>& x, double eps = 1e-5, double tol = 1e-4) {
    TensorT<double> xg = TensorT<double>::leaf(x.shape(), x.data(), /*requires_grad=*/true);
    TensorT<double> y = f(xg);
    if (y.numel() != 1) throw ContractError("gradcheck: f must be scalar-valued, got " + shape_str(y.shape()));
    backward(y);
    std::vector<double> analytic =
        xg.grad().empty() ? std::vector<double>(x.numel(), 0.0) : xg.grad();

    GradcheckReport rep;
    const std::vector<double>& base = x.data();
    for (size_t i = 0; i < base.size(); ++i) {
        std::vector<double> plus = base, minus = base;
        plus[i] += eps;
        minus[i] -= eps;
        double fp = f(TensorT<double>::leaf(x.shape(), std::move(plus))).data()[0];
        double fm = f(TensorT<double>::leaf(x.shape(), std::move(minus))).data()[0];
        double num = (fp - fm) / (2.0 * eps);
        double rel = std::abs(analytic[i] - num) /
                     std::max({1.0, std::abs(analytic[i]), std::abs(num)});
        if (rel > rep.max_rel_err) {
            rep.max_rel_err = rel;
            rep.worst_index = i;
        }
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

}  // namespace axialfuse
