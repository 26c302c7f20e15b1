#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "frcnet/frcnet.hpp"

namespace frcnet::test {

template <typename T = double>
Tensor<T> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    std::mt19937_64 rng(seed);
    Tensor<T> t(std::move(shape));
    for (auto& x : t.storage()) x = static_cast<T>(uniform(rng, lo, hi));
    return t;
}

template <typename T = double>
Var<T> leaf(Tensor<T> t) {
    return Var<T>(std::move(t), true);
}

/// Max over elements of |analytic - numeric| / max(|analytic|, |numeric|, floor),
/// using central differences of `f` with respect to every element of every input.
inline double gradient_rel_error(std::vector<Var<double>> inputs, const std::function<Var<double>()>& f,
                                 double h = 1e-6, double floor = 1e-4) {
    for (auto& v : inputs) v.zero_grad();
    Var<double> y = f();
    backward(y);
    std::vector<Tensor<double>> analytic;
    for (auto& v : inputs) analytic.push_back(v.grad());
    double worst = 0;
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor<double>& x = inputs[k].mutable_value();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double orig = x[i];
            double fp, fm;
            {
                NoGradGuard g;
                x[i] = orig + h;
                fp = f().item();
                x[i] = orig - h;
                fm = f().item();
            }
            x[i] = orig;
            const double num = (fp - fm) / (2 * h);
            const double a = analytic[k][i];
            worst = std::max(worst, std::abs(a - num) / std::max({std::abs(a), std::abs(num), floor}));
        }
    }
    return worst;
}

/// Random weighting so gradients of non-scalar outputs are checked through a scalar.
inline Var<double> weighted_sum(const Var<double>& y, std::uint64_t seed) {
    return sum(mul(y, Var<double>(random_tensor<double>(y.shape(), seed))));
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
    return m;
}

} // namespace frcnet::test
