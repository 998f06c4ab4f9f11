#pragma once

#include <cstddef>
#include <vector>

#include "dlspf/tensor.hpp"

namespace dlspf {

// Warm-up cosine annealing: linear ramp 0 -> base_lr over warmup_steps,
// then cosine decay base_lr -> min_lr at total_steps. Steps past
// total_steps clamp to min_lr.
struct LrSchedule {
    double base_lr = 1e-3;
    std::size_t warmup_steps = 0;
    std::size_t total_steps = 1;
    double min_lr = 0.0;
};

double lr_at(const LrSchedule& schedule, std::size_t step);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lr = 1e-3;
    std::size_t step = 0;
    // Parallel to the parameter list handed to adam_step.
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
};

// Standard Adam update with bias correction, applied in place to the
// parameter tensors. Throws TrainingDivergenceError on non-finite
// gradients; the parameters are left untouched in that case.
void adam_step(std::vector<ad::Tensor>& params, AdamState& state);

// Rescales the gradients of `params` so the global L2 norm is at most
// max_norm. Returns the pre-clip norm.
double clip_grad_norm(std::vector<ad::Tensor>& params, double max_norm);

}  // namespace dlspf
