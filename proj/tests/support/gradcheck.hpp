#pragma once

// Central finite-difference gradient check. The scalar probe is
// sum(f(inputs) * R) for a fixed random R so every output element matters.

#include "plural/ops.hpp"

#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace plural::test {

struct GradCheckResult {
    double rel_error = 0.0;  // ||analytic - numeric|| / max(||analytic||, ||numeric||)
    double analytic_norm = 0.0;
};

inline GradCheckResult gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& f,
                                 std::vector<Tensor> inputs, std::uint64_t seed, double step = 1e-3) {
    std::mt19937_64 rng(seed);
    for (auto& t : inputs) t.set_requires_grad(true), t.zero_grad();
    Tensor out = f(inputs);
    std::uniform_real_distribution<float> d(-1.0f, 1.0f);
    std::vector<float> r(static_cast<std::size_t>(out.numel()));
    for (auto& v : r) v = d(rng);
    const Tensor probe = Tensor::from(out.shape(), r);

    auto eval = [&]() {
        NoGradGuard ng;
        const Tensor o = f(inputs);
        double s = 0.0;
        for (std::size_t i = 0; i < r.size(); ++i) s += static_cast<double>(o.data()[i]) * r[i];
        return s;
    };

    ops::sum(ops::mul(out, probe)).backward();
    double diff2 = 0.0, an2 = 0.0, nu2 = 0.0;
    for (auto& t : inputs) {
        std::vector<float> analytic(t.numel(), 0.0f);
        if (t.has_grad()) analytic.assign(t.grad().begin(), t.grad().end());
        auto data = t.mutable_data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const float orig = data[i];
            const float hi = static_cast<float>(orig + step);
            const float lo = static_cast<float>(orig - step);
            data[i] = hi;
            const double fp = eval();
            data[i] = lo;
            const double fm = eval();
            data[i] = orig;
            const double num = (fp - fm) / (static_cast<double>(hi) - lo);
            diff2 += (num - analytic[i]) * (num - analytic[i]);
            an2 += static_cast<double>(analytic[i]) * analytic[i];
            nu2 += num * num;
        }
    }
    GradCheckResult res;
    res.analytic_norm = std::sqrt(an2);
    res.rel_error = std::sqrt(diff2) / std::max({std::sqrt(an2), std::sqrt(nu2), 1e-8});
    return res;
}

}  // namespace plural::test
