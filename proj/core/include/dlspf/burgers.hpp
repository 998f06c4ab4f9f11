#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dlspf/rng.hpp"
#include "dlspf/tensor.hpp"

namespace dlspf::models {

using State = std::vector<double>;

// Viscous Burgers on [0, L] with homogeneous Dirichlet boundaries,
// second-order central differences in space, classical RK4 in time.
// Initial condition q(x, 0) = Q sin(2 pi x / L) with Q ~ U[q_lo, q_hi].
struct BurgersConfig {
    double length = 2.0;
    std::size_t grid_size = 128;
    double viscosity = 1.0 / 150.0;
    double dt = 1e-3;
    std::size_t n_steps = 300;
    double q_lo = 0.5;
    double q_hi = 1.5;

    double dx() const { return length / static_cast<double>(grid_size - 1); }
    void validate() const;
};

// Separate stencil terms; rhs = diffusion + advection. Boundary entries
// are zero in all three.
void burgers_diffusion(const State& q, const BurgersConfig& cfg, State& out);
void burgers_advection(const State& q, const BurgersConfig& cfg, State& out);
void burgers_rhs(const State& q, const BurgersConfig& cfg, State& out);

using RhsFn = std::function<void(const State&, State&)>;

// One classical fixed-step RK4 update.
State rk_step(const State& q, double dt, const RhsFn& rhs);
// In-place variant reusing caller-owned stage buffers (hot path).
struct Rk4Workspace {
    State k1, k2, k3, k4, tmp;
};
void rk_step_inplace(State& q, double dt, const RhsFn& rhs, Rk4Workspace& ws);

State burgers_initial(const BurgersConfig& cfg, double amplitude);

// Full trajectory including the t=0 snapshot: (n_steps+1) x grid_size.
// Throws on blow-up (max |q| > 1e3).
std::vector<State> simulate_burgers(const BurgersConfig& cfg, double amplitude);

struct BurgersDataset {
    ad::Tensor trajectories;  // [n, n_steps+1, grid_size]
    ad::Tensor amplitudes;    // [n]
};

// n trajectories with amplitudes drawn i.i.d. U[q_lo, q_hi] from
// per-trajectory substreams of (seed, stream_tag).
BurgersDataset generate_dataset(const BurgersConfig& cfg, std::size_t n, std::uint64_t seed,
                                std::uint64_t stream_tag = 0);

}  // namespace dlspf::models
