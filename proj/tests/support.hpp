#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "dlspf/rng.hpp"
#include "dlspf/tensor.hpp"

namespace dlspf::testing {

// Central finite-difference check of d(loss)/d(param) for every entry of
// every parameter against the tape gradient. Returns the worst relative
// error |analytic - numeric| / max(1e-4, |analytic| + |numeric|); the
// absolute floor keeps finite-difference noise from failing parameters
// whose true gradient is exactly zero (e.g. attention key biases).
inline double gradient_check(const std::function<ad::Tensor()>& loss_fn,
                             std::vector<ad::Tensor> params, double eps = 1e-6) {
    for (auto& p : params) p.zero_grad();
    {
        ad::GradientTape tape;
        ad::Tensor loss = loss_fn();
        tape.backward(loss);
    }
    double worst = 0.0;
    for (auto& p : params) {
        const std::vector<double> analytic =
            p.has_grad() ? p.grad() : std::vector<double>(p.size(), 0.0);
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double saved = p.value()[i];
            p.value()[i] = saved + eps;
            const double up = loss_fn().item();
            p.value()[i] = saved - eps;
            const double down = loss_fn().item();
            p.value()[i] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double scale = std::max(1e-4, std::abs(analytic[i]) + std::abs(numeric));
            worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
        }
    }
    for (auto& p : params) p.zero_grad();
    return worst;
}

// Upper regularized incomplete gamma Q(a, x) via series / continued
// fraction (used for chi-square p-values in statistical tests).
inline double gammq(double a, double x) {
    auto gser = [](double a_, double x_) {
        double ap = a_;
        double sum = 1.0 / a_;
        double del = sum;
        for (int n = 0; n < 500; ++n) {
            ap += 1.0;
            del *= x_ / ap;
            sum += del;
            if (std::abs(del) < std::abs(sum) * 1e-14) break;
        }
        return sum * std::exp(-x_ + a_ * std::log(x_) - std::lgamma(a_));
    };
    auto gcf = [](double a_, double x_) {
        const double tiny = 1e-300;
        double b = x_ + 1.0 - a_;
        double c = 1.0 / tiny;
        double d = 1.0 / b;
        double h = d;
        for (int i = 1; i < 500; ++i) {
            const double an = -static_cast<double>(i) * (static_cast<double>(i) - a_);
            b += 2.0;
            d = an * d + b;
            if (std::abs(d) < tiny) d = tiny;
            c = b + an / c;
            if (std::abs(c) < tiny) c = tiny;
            d = 1.0 / d;
            const double del = d * c;
            h *= del;
            if (std::abs(del - 1.0) < 1e-14) break;
        }
        return std::exp(-x_ + a_ * std::log(x_) - std::lgamma(a_)) * h;
    };
    if (x < 0.0 || a <= 0.0) return 1.0;
    if (x == 0.0) return 1.0;
    if (x < a + 1.0) return 1.0 - gser(a, x);
    return gcf(a, x);
}

// p-value of a chi-square statistic with k degrees of freedom.
inline double chi2_pvalue(double stat, double dof) { return gammq(0.5 * dof, 0.5 * stat); }

}  // namespace dlspf::testing
