#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "asyncflow/error.hpp"

namespace asyncflow {

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
/// Used as the independent oracle for autodiff checks.
template <class T>
std::vector<T> finite_diff_grad(const std::function<T(std::span<const T>)>& f,
                                std::span<const T> x, T eps) {
    ASYNCFLOW_EXPECT(eps > T(0), "finite_diff_grad: eps must be positive");
    std::vector<T> probe(x.begin(), x.end());
    std::vector<T> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const T xi = probe[i];
        probe[i] = xi + eps;
        const T fp = f(probe);
        probe[i] = xi - eps;
        const T fm = f(probe);
        probe[i] = xi;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw NumericError("finite_diff_grad: non-finite evaluation at coordinate " +
                               std::to_string(i));
        out[i] = (fp - fm) / (T(2) * eps);
    }
    return out;
}

/// ||a - b|| / max(||a||, ||b||, floor): the relative error used by the
/// gradient checks.
template <class T>
double relative_error(std::span<const T> a, std::span<const T> b, double floor = 1e-12) {
    ASYNCFLOW_EXPECT(a.size() == b.size(), "relative_error: length mismatch");
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double x = static_cast<double>(a[i]), y = static_cast<double>(b[i]);
        diff += (x - y) * (x - y);
        na += x * x;
        nb += y * y;
    }
    return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

}  // namespace asyncflow
