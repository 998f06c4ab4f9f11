#include <doctest.h>

#include <cmath>

#include "dlspf/stepper.hpp"
#include "support.hpp"

using namespace dlspf;
using namespace dlspf::ad;
using namespace dlspf::surrogate;
using dlspf::testing::gradient_check;

namespace {

StepperConfig tiny_cfg(std::size_t latent = 3, std::size_t memory = 2, std::size_t param_dim = 0) {
    StepperConfig cfg;
    cfg.latent_dim = latent;
    cfg.memory = memory;
    cfg.unroll = 2;
    cfg.param_dim = param_dim;
    cfg.embed_dim = 8;
    cfg.num_blocks = 1;
    cfg.num_heads = 2;
    return cfg;
}

// latent trajectories of a linear rotation-and-decay map (easy to learn)
Tensor rotation_latents(std::size_t n_traj, std::size_t t_len, std::uint64_t seed) {
    Tensor out({n_traj, t_len, 3}, Dtype::f64, false);
    RngStream rng(seed, 0);
    const double c = std::cos(0.25), s = std::sin(0.25), decay = 0.98;
    for (std::size_t tr = 0; tr < n_traj; ++tr) {
        double x = rng.normal(), y = rng.normal(), z = rng.normal();
        for (std::size_t t = 0; t < t_len; ++t) {
            double* row = out.value().data() + (tr * t_len + t) * 3;
            row[0] = x;
            row[1] = y;
            row[2] = z;
            const double nx = decay * (c * x - s * y);
            const double ny = decay * (s * x + c * y);
            const double nz = decay * z;
            x = nx;
            y = ny;
            z = nz;
        }
    }
    return out;
}

}  // namespace

TEST_CASE("param encoder output shape and determinism") {
    LatentStepper m = LatentStepper::init(tiny_cfg(3, 2, 2), 5);
    Tensor p = Tensor::from_data({2}, {0.3, 0.7});
    Tensor t1 = m.param_encode(p);
    Tensor t2 = m.param_encode(p);
    CHECK(t1.shape() == Shape{8});
    CHECK(t1.value() == t2.value());
    CHECK_THROWS_AS(m.param_encode(Tensor::zeros({3})), ShapeError);
    LatentStepper no_params = LatentStepper::init(tiny_cfg(), 5);
    CHECK_THROWS_AS(no_params.param_encode(p), ConfigError);
}

TEST_CASE("step output shape, determinism, and history contract") {
    LatentStepper m = LatentStepper::init(tiny_cfg(), 6);
    RngStream rng(6, 1);
    Tensor hist = Tensor::randn({3, 3}, rng);  // k+1 = 3 states
    Tensor out1 = m.step(hist);
    Tensor out2 = m.step(hist);
    CHECK(out1.shape() == Shape{3});
    CHECK(out1.value() == out2.value());
    CHECK_THROWS_AS(m.step(Tensor::randn({2, 3}, rng)), ShapeError);    // too short
    CHECK_THROWS_AS(m.step(Tensor::randn({4, 3}, rng)), ShapeError);    // too long
    CHECK_THROWS_AS(m.step(hist, Tensor::zeros({1})), ConfigError);     // no param input
}

TEST_CASE("pad_history repeats the earliest state") {
    std::vector<std::vector<double>> states{{1.0, 2.0}};
    auto flat = LatentStepper::pad_history(states, 3, 2);
    CHECK(flat == std::vector<double>{1, 2, 1, 2, 1, 2});

    states.push_back({3.0, 4.0});
    flat = LatentStepper::pad_history(states, 3, 2);
    CHECK(flat == std::vector<double>{1, 2, 1, 2, 3, 4});

    states.push_back({5.0, 6.0});
    states.push_back({7.0, 8.0});
    flat = LatentStepper::pad_history(states, 3, 2);
    CHECK(flat == std::vector<double>{3, 4, 5, 6, 7, 8});  // last k+1 only
}

TEST_CASE("fixed window: context beyond k+1 never changes the step") {
    LatentStepper m = LatentStepper::init(tiny_cfg(), 7);
    RngStream rng(7, 1);
    std::vector<std::vector<double>> longhist;
    for (int i = 0; i < 6; ++i)
        longhist.push_back({rng.normal(), rng.normal(), rng.normal()});
    auto w1 = LatentStepper::pad_history(longhist, 3, 3);
    // drop the stale front entries; the padded window must be identical
    std::vector<std::vector<double>> tail(longhist.end() - 3, longhist.end());
    auto w2 = LatentStepper::pad_history(tail, 3, 3);
    CHECK(w1 == w2);
    // and changing an in-window entry does change the prediction
    Tensor h1 = Tensor::from_data({3, 3}, w1);
    Tensor out1 = m.step(h1);
    auto w3 = w1;
    w3[0] += 0.5;
    Tensor out3 = m.step(Tensor::from_data({3, 3}, w3));
    CHECK(out1.value() != out3.value());
}

TEST_CASE("rollout length, degenerate single step, and determinism") {
    LatentStepper m = LatentStepper::init(tiny_cfg(), 8);
    RngStream rng(8, 1);
    std::vector<std::vector<double>> init;
    for (int i = 0; i < 3; ++i) init.push_back({rng.normal(), rng.normal(), rng.normal()});

    const auto traj1 = m.rollout(init, {}, 5);
    CHECK(traj1.size() == 3 + 5);  // k+1+s
    const auto traj2 = m.rollout(init, {}, 5);
    for (std::size_t i = 0; i < traj1.size(); ++i) CHECK(traj1[i] == traj2[i]);

    const auto one = m.rollout(init, {}, 1);
    Tensor hist = Tensor::from_data({3, 3}, LatentStepper::pad_history(init, 3, 3));
    Tensor single = m.step(hist);
    CHECK(one.back() == single.value());
}

TEST_CASE("unrolled loss with s = 1 equals the plain one-step mse") {
    LatentStepper m = LatentStepper::init(tiny_cfg(), 9);
    RngStream rng(9, 1);
    Tensor hist = Tensor::randn({2, 3, 3}, rng);
    Tensor target = Tensor::randn({2, 3}, rng);
    Tensor loss = unrolled_loss(m, hist, {target});
    Tensor direct = mse(m.step(hist), target);
    CHECK(loss.item() == doctest::Approx(direct.item()).epsilon(1e-15));
}

TEST_CASE("perfect predictor has exactly zero unrolled loss") {
    LatentStepper m = LatentStepper::init(tiny_cfg(), 10);
    RngStream rng(10, 1);
    Tensor hist = Tensor::randn({1, 3, 3}, rng);
    // targets = the model's own recursive predictions
    std::vector<Tensor> targets;
    Tensor window = hist;
    for (int i = 0; i < 3; ++i) {
        Tensor pred = m.step(window);
        targets.push_back(pred.detached_copy());
        Tensor shifted = slice(window, 1, 1, 3);
        window = concat({shifted, reshape(pred, {1, 1, 3})}, 1);
    }
    CHECK(unrolled_loss(m, hist, targets).item() == 0.0);
}

TEST_CASE("full stepper gradient check") {
    StepperConfig cfg = tiny_cfg(2, 1, 1);
    cfg.embed_dim = 6;
    cfg.num_heads = 2;
    LatentStepper m = LatentStepper::init(cfg, 11);
    RngStream rng(11, 1);
    Tensor hist = Tensor::randn({2, 2, 2}, rng);
    Tensor mparam = Tensor::from_data({2, 1}, {0.2, 0.9});
    Tensor t0 = Tensor::randn({2, 2}, rng);
    Tensor t1 = Tensor::randn({2, 2}, rng);
    auto params = m.params();
    const double err = gradient_check(
        [&] { return unrolled_loss(m, hist, {t0, t1}, mparam); }, params, 1e-5);
    CHECK(err < 1e-5);
}

TEST_CASE("parameter token changes predictions") {
    LatentStepper m = LatentStepper::init(tiny_cfg(3, 2, 1), 12);
    RngStream rng(12, 1);
    Tensor hist = Tensor::randn({3, 3}, rng);
    Tensor m1 = Tensor::from_data({1}, {0.1});
    Tensor m2 = Tensor::from_data({1}, {0.9});
    CHECK(m.step(hist, m1).value() != m.step(hist, m2).value());
}

TEST_CASE("training learns a linear latent map and is reproducible") {
    Tensor latents = rotation_latents(24, 20, 55);
    StepperTrainConfig tc;
    tc.epochs = 20;
    tc.batch_size = 16;
    tc.windows_per_epoch = 256;
    tc.seed = 7;
    tc.lr = {3e-3, 30, 1, 1e-4};

    LatentStepper m1 = LatentStepper::init(tiny_cfg(), 7);
    const auto h1 = train_stepper(m1, latents, Tensor(), tc);
    CHECK(h1.size() == tc.epochs);
    CHECK(h1.back().loss < 0.25 * h1.front().loss);

    LatentStepper m2 = LatentStepper::init(tiny_cfg(), 7);
    const auto h2 = train_stepper(m2, latents, Tensor(), tc);
    for (std::size_t i = 0; i < h1.size(); ++i) CHECK(h1[i].loss == h2[i].loss);
}

TEST_CASE("latent dim mismatch is rejected") {
    LatentStepper m = LatentStepper::init(tiny_cfg(4), 13);
    Tensor latents = rotation_latents(4, 10, 1);  // latent dim 3
    StepperTrainConfig tc;
    tc.epochs = 1;
    CHECK_THROWS_AS(train_stepper(m, latents, Tensor(), tc), ConfigError);
}

TEST_CASE("checkpoint round trip reproduces rollouts bit-exactly") {
    LatentStepper m = LatentStepper::init(tiny_cfg(3, 2, 1), 14);
    auto ckpt = m.to_checkpoint("hash");
    LatentStepper back = LatentStepper::from_checkpoint(m.cfg, ckpt);
    RngStream rng(14, 1);
    std::vector<std::vector<double>> init;
    for (int i = 0; i < 3; ++i) init.push_back({rng.normal(), rng.normal(), rng.normal()});
    const std::vector<double> mp{0.4};
    const auto t1 = m.rollout(init, mp, 4);
    const auto t2 = back.rollout(init, mp, 4);
    for (std::size_t i = 0; i < t1.size(); ++i) CHECK(t1[i] == t2[i]);
}
