#include <doctest.h>

#include <cmath>

#include "dlspf/burgers.hpp"
#include "dlspf/errors.hpp"

using namespace dlspf;
using namespace dlspf::models;

namespace {
BurgersConfig desk_cfg() {
    BurgersConfig cfg;
    cfg.grid_size = 128;
    return cfg;
}
}  // namespace

TEST_CASE("rhs of the zero state is zero") {
    BurgersConfig cfg = desk_cfg();
    State q(cfg.grid_size, 0.0);
    State out;
    burgers_rhs(q, cfg, out);
    for (double v : out) CHECK(v == 0.0);
}

TEST_CASE("hand stencil: diffusion-only triple at dx = 1") {
    BurgersConfig cfg;
    cfg.grid_size = 3;
    cfg.length = 2.0;  // dx = 1
    cfg.viscosity = 1.0 / 150.0;
    State q{0.0, 1.0, 0.0};
    State out;
    burgers_rhs(q, cfg, out);
    CHECK(out[1] == doctest::Approx(-2.0 / 150.0).epsilon(1e-12));
    CHECK(out[0] == 0.0);
    CHECK(out[2] == 0.0);
}

TEST_CASE("term splitting: diffusion is odd, advection is even under q -> -q") {
    BurgersConfig cfg = desk_cfg();
    RngStream rng(5, 1);
    State q(cfg.grid_size);
    for (std::size_t i = 1; i + 1 < q.size(); ++i) q[i] = rng.normal();
    q.front() = q.back() = 0.0;
    State neg = q;
    for (double& v : neg) v = -v;

    State diff_q, adv_q, diff_n, adv_n, rhs_q, rhs_n;
    burgers_diffusion(q, cfg, diff_q);
    burgers_advection(q, cfg, adv_q);
    burgers_diffusion(neg, cfg, diff_n);
    burgers_advection(neg, cfg, adv_n);
    burgers_rhs(q, cfg, rhs_q);
    burgers_rhs(neg, cfg, rhs_n);
    for (std::size_t i = 0; i < q.size(); ++i) {
        CHECK(diff_n[i] == doctest::Approx(-diff_q[i]).epsilon(1e-12));
        CHECK(adv_n[i] == doctest::Approx(adv_q[i]).epsilon(1e-12));
        CHECK(rhs_n[i] == doctest::Approx(-diff_q[i] + adv_q[i]).epsilon(1e-12));
        CHECK(rhs_q[i] == doctest::Approx(diff_q[i] + adv_q[i]).epsilon(1e-12));
    }
}

TEST_CASE("rk_step is stationary on a zero rhs") {
    State q{1.0, 2.0, 3.0};
    const RhsFn rhs = [](const State&, State& out) { out.assign(3, 0.0); };
    State next = rk_step(q, 0.001, rhs);
    CHECK(next == q);
}

TEST_CASE("rk4 on dq/dt = -q matches the 4th-order Taylor factor") {
    const double dt = 0.001;
    State q{1.0};
    const RhsFn rhs = [](const State& s, State& out) { out.assign(1, -s[0]); };
    State next = rk_step(q, dt, rhs);
    const double expected = 1.0 - dt + dt * dt / 2 - dt * dt * dt / 6 + dt * dt * dt * dt / 24;
    CHECK(next[0] == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("rk4 one-step error order: halving dt reduces error ~ 2^5") {
    const RhsFn rhs = [](const State& s, State& out) { out.assign(1, -s[0]); };
    auto one_step_error = [&](double dt) {
        State q{1.0};
        State next = rk_step(q, dt, rhs);
        return std::abs(next[0] - std::exp(-dt));
    };
    const double e1 = one_step_error(0.1);
    const double e2 = one_step_error(0.05);
    const double ratio = e1 / e2;
    CHECK(ratio > 24.0);  // 2^5 = 32 with rounding slack
    CHECK(ratio < 40.0);
}

TEST_CASE("initial condition hits the analytic sine values") {
    BurgersConfig cfg = desk_cfg();
    cfg.grid_size = 129;  // L/4 and L/2 fall on grid nodes
    State q0 = burgers_initial(cfg, 1.2);
    CHECK(q0[64] == doctest::Approx(0.0).epsilon(1e-12));   // x = L/2
    CHECK(q0[32] == doctest::Approx(1.2).epsilon(1e-12));   // x = L/4
    CHECK(q0.front() == 0.0);
    CHECK(q0.back() == 0.0);
}

TEST_CASE("trajectory shape is (n_steps + 1) x N_x and stays bounded") {
    BurgersConfig cfg = desk_cfg();
    cfg.n_steps = 300;
    const auto traj = simulate_burgers(cfg, 1.0);
    CHECK(traj.size() == 301);
    CHECK(traj.front().size() == cfg.grid_size);
    for (const auto& s : traj)
        for (double v : s) CHECK(std::abs(v) < 1e3);
}

TEST_CASE("energy is non-increasing under viscous dissipation") {
    BurgersConfig cfg = desk_cfg();
    const auto traj = simulate_burgers(cfg, 1.5);
    auto energy = [&](const State& s) {
        double e = 0.0;
        for (double v : s) e += v * v;
        return e * cfg.dx();
    };
    double prev = energy(traj[0]);
    for (std::size_t i = 1; i < traj.size(); ++i) {
        const double cur = energy(traj[i]);
        CHECK(cur <= prev + 1e-12);
        prev = cur;
    }
}

TEST_CASE("mirror symmetry: x -> L - x, q -> -q maps solutions to solutions") {
    BurgersConfig cfg = desk_cfg();
    cfg.n_steps = 50;
    // smooth random initial data, zero at the boundaries
    State q0(cfg.grid_size, 0.0);
    for (std::size_t i = 1; i + 1 < q0.size(); ++i) {
        const double x = static_cast<double>(i) * cfg.dx();
        q0[i] = 0.8 * std::sin(2 * M_PI * x / cfg.length) + 0.3 * std::sin(4 * M_PI * x / cfg.length);
    }
    State q0_mirror(q0.rbegin(), q0.rend());
    for (double& v : q0_mirror) v = -v;

    auto advance = [&](State q, std::size_t steps) {
        Rk4Workspace ws;
        const RhsFn rhs = [&cfg](const State& s, State& out) { burgers_rhs(s, cfg, out); };
        std::vector<State> traj{q};
        for (std::size_t s = 0; s < steps; ++s) {
            rk_step_inplace(q, cfg.dt, rhs, ws);
            traj.push_back(q);
        }
        return traj;
    };
    const auto ta = advance(q0, cfg.n_steps);
    const auto tb = advance(q0_mirror, cfg.n_steps);
    for (std::size_t s = 0; s < ta.size(); ++s)
        for (std::size_t i = 0; i < cfg.grid_size; ++i)
            CHECK(tb[s][i] == doctest::Approx(-ta[s][cfg.grid_size - 1 - i]).epsilon(1e-10));
}

TEST_CASE("simulation aborts on blow-up") {
    BurgersConfig cfg = desk_cfg();
    cfg.dt = 0.5;  // grossly unstable for this grid
    cfg.n_steps = 200;
    CHECK_THROWS_AS(simulate_burgers(cfg, 1.5), SimulationBlowupError);
}

TEST_CASE("dataset generation is deterministic and respects the amplitude law") {
    BurgersConfig cfg = desk_cfg();
    cfg.n_steps = 40;
    const auto a = generate_dataset(cfg, 8, 99);
    const auto b = generate_dataset(cfg, 8, 99);
    CHECK(a.trajectories.value() == b.trajectories.value());
    CHECK(a.amplitudes.value() == b.amplitudes.value());
    const auto c = generate_dataset(cfg, 8, 100);
    CHECK(a.trajectories.value() != c.trajectories.value());
    for (std::size_t t = 0; t < 8; ++t) {
        const double amp = a.amplitudes.value()[t];
        CHECK(amp >= cfg.q_lo);
        CHECK(amp <= cfg.q_hi);
        // max |q| at t=0 equals the amplitude (up to grid resolution)
        double mx = 0.0;
        for (std::size_t i = 0; i < cfg.grid_size; ++i)
            mx = std::max(mx, std::abs(a.trajectories.at({t, 0, i})));
        CHECK(mx == doctest::Approx(amp).epsilon(1e-3));
    }
}

TEST_CASE("config validation") {
    BurgersConfig cfg;
    cfg.grid_size = 2;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = BurgersConfig{};
    cfg.dt = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = BurgersConfig{};
    cfg.q_lo = 2.0;
    cfg.q_hi = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
