#pragma once

#include <functional>

#include "dat/ops.hpp"

namespace dat {

// Central-difference check of the autodiff gradient of a scalar function f at x.
// Returns the max relative error over coordinates, denominator max(|a|,|b|,1e-6);
// the floor keeps coordinates whose true gradient sits below the fd noise level
// (~1e-10 for O(1) losses at h=1e-5) from reading as spurious relative error.
// `skip` filters out coordinates sitting on non-differentiable kinks.
template <typename T>
T finite_difference_check(const std::function<Tensor<T>(Tape<T>&, const Tensor<T>&)>& f,
                          const Tensor<T>& x, T h,
                          const std::function<bool(long)>& skip = nullptr) {
    if (!(h > T(0))) throw std::invalid_argument("finite_difference_check: h must be positive");
    x->requires_grad = true;
    x->ensure_grad();
    x->zero_grad();
    Tape<T> tape;
    auto loss = f(tape, x);
    if (loss->size() != 1) throw std::invalid_argument("finite_difference_check: f must be scalar");
    tape.backward(loss);
    std::vector<T> analytic = x->grad;

    auto eval = [&](const Tensor<T>& xi) {
        Tape<T> t;
        return f(t, xi)->value[0];
    };

    T max_rel = 0;
    for (long i = 0; i < x->size(); ++i) {
        if (skip && skip(i)) continue;
        const T saved = x->value[i];
        x->value[i] = saved + h;
        const T fp = eval(x);
        x->value[i] = saved - h;
        const T fm = eval(x);
        x->value[i] = saved;
        const T fd = (fp - fm) / (T(2) * h);
        const T a = analytic[i];
        const T denom = std::max(std::max(std::abs(a), std::abs(fd)), T(1e-6));
        max_rel = std::max(max_rel, std::abs(a - fd) / denom);
    }
    return max_rel;
}

}  // namespace dat
