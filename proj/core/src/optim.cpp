#include "dlspf/optim.hpp"

#include <cmath>

#include "dlspf/errors.hpp"

namespace dlspf {

double lr_at(const LrSchedule& schedule, std::size_t step) {
    if (schedule.warmup_steps > 0 && step < schedule.warmup_steps) {
        return schedule.base_lr * static_cast<double>(step) /
               static_cast<double>(schedule.warmup_steps);
    }
    if (step >= schedule.total_steps) return schedule.min_lr;
    const double span =
        static_cast<double>(schedule.total_steps - schedule.warmup_steps);
    if (span <= 0.0) return schedule.base_lr;
    const double t = static_cast<double>(step - schedule.warmup_steps) / span;
    return schedule.min_lr +
           0.5 * (schedule.base_lr - schedule.min_lr) * (1.0 + std::cos(M_PI * t));
}

void adam_step(std::vector<ad::Tensor>& params, AdamState& state) {
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            state.m[i].assign(params[i].size(), 0.0);
            state.v[i].assign(params[i].size(), 0.0);
        }
    }
    if (state.m.size() != params.size())
        throw ShapeError("adam_step: parameter count changed under the optimizer");

    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].size() != state.m[i].size())
            throw ShapeError("adam_step: parameter shape changed under the optimizer");
        if (!params[i].has_grad()) continue;
        for (double g : params[i].grad())
            if (!std::isfinite(g))
                throw TrainingDivergenceError("adam_step: non-finite gradient");
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& value = params[i].value();
        const bool has = params[i].has_grad();
        auto& m = state.m[i];
        auto& v = state.v[i];
        for (std::size_t j = 0; j < value.size(); ++j) {
            const double g = has ? params[i].grad()[j] : 0.0;
            m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
            v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            value[j] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

double clip_grad_norm(std::vector<ad::Tensor>& params, double max_norm) {
    if (max_norm <= 0.0) throw ShapeError("clip_grad_norm: max_norm must be positive");
    double sq = 0.0;
    for (auto& p : params) {
        if (!p.has_grad()) continue;
        for (double g : p.grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double scale = max_norm / norm;
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            for (double& g : p.grad()) g *= scale;
        }
    }
    return norm;
}

}  // namespace dlspf
