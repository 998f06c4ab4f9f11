#include <doctest.h>

#include <cmath>

#include "dlspf/optim.hpp"

using namespace dlspf;
using ad::Dtype;
using ad::Tensor;

TEST_CASE("adam with zero gradients is a fixed point") {
    Tensor p = Tensor::from_data({3}, {1.0, -2.0, 3.0}, Dtype::f64, true);
    p.grad();  // zero gradient buffer
    std::vector<Tensor> params{p};
    AdamState st;
    st.lr = 0.1;
    adam_step(params, st);
    CHECK(st.step == 1);
    CHECK(p.value() == std::vector<double>{1.0, -2.0, 3.0});
}

TEST_CASE("first adam step with defaults moves by ~ -lr") {
    // bias correction gives mhat = g, vhat = g^2, so delta = -lr g/(|g|+eps)
    Tensor p = Tensor::from_data({1}, {0.5}, Dtype::f64, true);
    p.grad()[0] = 2.0;
    std::vector<Tensor> params{p};
    AdamState st;
    st.lr = 0.1;
    adam_step(params, st);
    CHECK(p.value()[0] == doctest::Approx(0.5 - 0.1).epsilon(1e-7));
}

TEST_CASE("equal gradients produce equal updates") {
    Tensor p = Tensor::from_data({2}, {1.0, 1.0}, Dtype::f64, true);
    p.grad()[0] = 0.7;
    p.grad()[1] = 0.7;
    std::vector<Tensor> params{p};
    AdamState st;
    st.lr = 0.05;
    adam_step(params, st);
    CHECK(p.value()[0] == p.value()[1]);
}

TEST_CASE("non-finite gradient rejects the update") {
    Tensor p = Tensor::from_data({1}, {1.0}, Dtype::f64, true);
    p.grad()[0] = std::numeric_limits<double>::quiet_NaN();
    std::vector<Tensor> params{p};
    AdamState st;
    CHECK_THROWS_AS(adam_step(params, st), TrainingDivergenceError);
    CHECK(p.value()[0] == 1.0);
    CHECK(st.step == 0);
}

TEST_CASE("adam converges on a quadratic") {
    Tensor p = Tensor::from_data({1}, {4.0}, Dtype::f64, true);
    std::vector<Tensor> params{p};
    AdamState st;
    st.lr = 0.1;
    for (int i = 0; i < 400; ++i) {
        p.zero_grad();
        p.grad()[0] = 2.0 * p.value()[0];  // d/dp p^2
        adam_step(params, st);
    }
    CHECK(std::abs(p.value()[0]) < 1e-2);
    CHECK(st.step == 400);
}

TEST_CASE("lr schedule ramp and cosine checkpoints") {
    LrSchedule s{1e-3, 100, 1100, 1e-5};
    CHECK(lr_at(s, 0) == 0.0);
    CHECK(lr_at(s, 100) == doctest::Approx(1e-3));
    CHECK(lr_at(s, 600) == doctest::Approx((1e-3 + 1e-5) / 2));  // cosine midpoint
    CHECK(lr_at(s, 1100) == doctest::Approx(1e-5));
    CHECK(lr_at(s, 5000) == doctest::Approx(1e-5));  // clamps past the end
    for (std::size_t t = 0; t <= 100; ++t) {
        CHECK(lr_at(s, t) >= 0.0);
        CHECK(lr_at(s, t) <= s.base_lr);
        if (t > 0) CHECK(lr_at(s, t) >= lr_at(s, t - 1));  // monotone ramp
    }
}

TEST_CASE("clip_grad_norm leaves small gradients and rescales large ones") {
    Tensor p = Tensor::from_data({2}, {0.0, 0.0}, Dtype::f64, true);
    p.grad()[0] = 0.3;
    p.grad()[1] = 0.4;  // norm 0.5
    std::vector<Tensor> params{p};
    CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(0.5));
    CHECK(p.grad()[0] == doctest::Approx(0.3));

    p.grad()[0] = 3.0;
    p.grad()[1] = 4.0;  // norm 5
    CHECK(clip_grad_norm(params, 1.0) == doctest::Approx(5.0));
    CHECK(p.grad()[0] == doctest::Approx(0.6));
    CHECK(p.grad()[1] == doctest::Approx(0.8));

    // post-condition: norm <= max_norm
    const double norm = std::hypot(p.grad()[0], p.grad()[1]);
    CHECK(norm <= 1.0 + 1e-12);
}
