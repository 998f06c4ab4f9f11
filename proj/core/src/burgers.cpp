#include "dlspf/burgers.hpp"

#include <cmath>

#include "dlspf/errors.hpp"

namespace dlspf::models {

void BurgersConfig::validate() const {
    if (grid_size < 3) throw ConfigError("burgers: grid_size must be >= 3");
    if (dt <= 0.0) throw ConfigError("burgers: dt must be positive");
    if (q_lo > q_hi) throw ConfigError("burgers: amplitude range inverted");
    if (length <= 0.0 || viscosity < 0.0) throw ConfigError("burgers: bad length/viscosity");
}

void burgers_diffusion(const State& q, const BurgersConfig& cfg, State& out) {
    const std::size_t n = q.size();
    out.assign(n, 0.0);
    const double idx2 = cfg.viscosity / (cfg.dx() * cfg.dx());
    for (std::size_t i = 1; i + 1 < n; ++i)
        out[i] = idx2 * (q[i - 1] - 2.0 * q[i] + q[i + 1]);
}

// Advection in skew-symmetric split form, -(1/3)[q q_x + (q^2)_x], with
// central second-order stencils. Discretely energy-neutral under the
// Dirichlet boundaries, which keeps steep fronts from blowing up on
// coarse grids where the plain convective form goes unstable.
void burgers_advection(const State& q, const BurgersConfig& cfg, State& out) {
    const std::size_t n = q.size();
    out.assign(n, 0.0);
    const double i6dx = 1.0 / (6.0 * cfg.dx());
    for (std::size_t i = 1; i + 1 < n; ++i)
        out[i] = -(q[i] * (q[i + 1] - q[i - 1]) +
                   (q[i + 1] * q[i + 1] - q[i - 1] * q[i - 1])) *
                 i6dx;
}

void burgers_rhs(const State& q, const BurgersConfig& cfg, State& out) {
    const std::size_t n = q.size();
    out.assign(n, 0.0);
    const double idx2 = cfg.viscosity / (cfg.dx() * cfg.dx());
    const double i6dx = 1.0 / (6.0 * cfg.dx());
    for (std::size_t i = 1; i + 1 < n; ++i)
        out[i] = idx2 * (q[i - 1] - 2.0 * q[i] + q[i + 1]) -
                 (q[i] * (q[i + 1] - q[i - 1]) +
                  (q[i + 1] * q[i + 1] - q[i - 1] * q[i - 1])) *
                     i6dx;
}

State rk_step(const State& q, double dt, const RhsFn& rhs) {
    State q2 = q;
    Rk4Workspace ws;
    rk_step_inplace(q2, dt, rhs, ws);
    return q2;
}

void rk_step_inplace(State& q, double dt, const RhsFn& rhs, Rk4Workspace& ws) {
    if (dt <= 0.0) throw ConfigError("rk_step: dt must be positive");
    const std::size_t n = q.size();
    ws.tmp.resize(n);

    rhs(q, ws.k1);
    for (std::size_t i = 0; i < n; ++i) ws.tmp[i] = q[i] + 0.5 * dt * ws.k1[i];
    rhs(ws.tmp, ws.k2);
    for (std::size_t i = 0; i < n; ++i) ws.tmp[i] = q[i] + 0.5 * dt * ws.k2[i];
    rhs(ws.tmp, ws.k3);
    for (std::size_t i = 0; i < n; ++i) ws.tmp[i] = q[i] + dt * ws.k3[i];
    rhs(ws.tmp, ws.k4);
    const double w = dt / 6.0;
    for (std::size_t i = 0; i < n; ++i)
        q[i] += w * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
}

State burgers_initial(const BurgersConfig& cfg, double amplitude) {
    State q(cfg.grid_size, 0.0);
    const double two_pi_over_l = 2.0 * M_PI / cfg.length;
    for (std::size_t i = 0; i < cfg.grid_size; ++i)
        q[i] = amplitude * std::sin(two_pi_over_l * static_cast<double>(i) * cfg.dx());
    q.front() = 0.0;
    q.back() = 0.0;
    return q;
}

std::vector<State> simulate_burgers(const BurgersConfig& cfg, double amplitude) {
    cfg.validate();
    std::vector<State> traj;
    traj.reserve(cfg.n_steps + 1);
    State q = burgers_initial(cfg, amplitude);
    traj.push_back(q);
    Rk4Workspace ws;
    const RhsFn rhs = [&cfg](const State& s, State& out) { burgers_rhs(s, cfg, out); };
    for (std::size_t step = 0; step < cfg.n_steps; ++step) {
        rk_step_inplace(q, cfg.dt, rhs, ws);
        double mx = 0.0;
        for (double v : q) mx = std::max(mx, std::abs(v));
        if (!(mx < 1e3))
            throw SimulationBlowupError("burgers: |q| exceeded 1e3 at step " +
                                        std::to_string(step + 1));
        traj.push_back(q);
    }
    return traj;
}

BurgersDataset generate_dataset(const BurgersConfig& cfg, std::size_t n, std::uint64_t seed,
                                std::uint64_t stream_tag) {
    if (n < 1) throw ConfigError("generate_dataset: need n >= 1");
    cfg.validate();
    BurgersDataset ds;
    ds.trajectories =
        ad::Tensor::zeros({n, cfg.n_steps + 1, cfg.grid_size}, ad::Dtype::f64, false);
    ds.amplitudes = ad::Tensor::zeros({n}, ad::Dtype::f64, false);
    const std::size_t row = cfg.grid_size;
    const std::size_t traj_len = (cfg.n_steps + 1) * row;
    for (std::size_t t = 0; t < n; ++t) {
        RngStream rng(seed, substream_id(stream_tag, t, 0x71A9));
        const double amp = rng.uniform(cfg.q_lo, cfg.q_hi);
        ds.amplitudes.value()[t] = amp;
        const auto traj = simulate_burgers(cfg, amp);
        double* dst = ds.trajectories.value().data() + t * traj_len;
        for (std::size_t s = 0; s <= cfg.n_steps; ++s)
            for (std::size_t i = 0; i < row; ++i) dst[s * row + i] = traj[s][i];
    }
    return ds;
}

}  // namespace dlspf::models
