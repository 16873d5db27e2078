#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "psyn/common.hpp"

namespace psyn {

// Flat model parameters. All kernels reduce strictly left to right and never
// parallelize internally, so simulated runs are bit-reproducible.
using ParameterVector = std::vector<double>;

inline void check_same_dim(size_t a, size_t b, const char* what) {
    if (a != b)
        throw std::invalid_argument(std::string(what) + ": dimension mismatch (" +
                                    std::to_string(a) + " vs " + std::to_string(b) + ")");
}

inline bool all_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

// a*x + b*y elementwise. Zero coefficients skip their term and unit
// coefficients skip the multiply, so axpby(1,x,0,y) == x bitwise.
inline ParameterVector axpby(double a, const ParameterVector& x, double b,
                             const ParameterVector& y) {
    check_same_dim(x.size(), y.size(), "axpby");
    ParameterVector r(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        double acc;
        if (a == 0.0) {
            acc = (b == 0.0) ? 0.0 : (b == 1.0 ? y[i] : b * y[i]);
        } else {
            acc = (a == 1.0) ? x[i] : a * x[i];
            if (b != 0.0) acc += (b == 1.0) ? y[i] : b * y[i];
        }
        r[i] = acc;
    }
    return r;
}

inline double dot(const ParameterVector& x, const ParameterVector& y) {
    check_same_dim(x.size(), y.size(), "dot");
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm2(const ParameterVector& x) { return std::sqrt(dot(x, x)); }

inline ParameterVector zeros(size_t dim) { return ParameterVector(dim, 0.0); }

}  // namespace psyn
