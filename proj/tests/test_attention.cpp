#include <doctest.h>

#include <cmath>

#include "dlspf/attention.hpp"
#include "support.hpp"

using namespace dlspf;
using namespace dlspf::ad;
using namespace dlspf::nn;
using dlspf::testing::gradient_check;

TEST_CASE("k = 1 attention returns V regardless of Q and K") {
    RngStream rng(1, 1);
    Tensor q = Tensor::randn({1, 4}, rng);
    Tensor k = Tensor::randn({1, 4}, rng);
    Tensor v = Tensor::randn({1, 4}, rng);
    Tensor out = scaled_dot_product_attention(q, k, v);
    for (std::size_t i = 0; i < 4; ++i)
        CHECK(out.value()[i] == doctest::Approx(v.value()[i]).epsilon(1e-12));
}

TEST_CASE("zero queries give uniform attention (column mean of V)") {
    RngStream rng(2, 1);
    Tensor q = Tensor::zeros({3, 4});
    Tensor k = Tensor::randn({3, 4}, rng);
    Tensor v = Tensor::randn({3, 4}, rng);
    Tensor out = scaled_dot_product_attention(q, k, v);
    for (std::size_t c = 0; c < 4; ++c) {
        double mean = 0.0;
        for (std::size_t r = 0; r < 3; ++r) mean += v.at({r, c});
        mean /= 3.0;
        for (std::size_t r = 0; r < 3; ++r)
            CHECK(out.at({r, c}) == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("uniform attention is invariant to permuting value rows") {
    RngStream rng(3, 1);
    Tensor q = Tensor::zeros({3, 2});
    Tensor k = Tensor::randn({3, 2}, rng);
    Tensor v = Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6});
    Tensor v_perm = Tensor::from_data({3, 2}, {5, 6, 1, 2, 3, 4});
    Tensor a = scaled_dot_product_attention(q, k, v);
    Tensor b = scaled_dot_product_attention(q, k, v_perm);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a.value()[i] == doctest::Approx(b.value()[i]).epsilon(1e-12));
}

TEST_CASE("attention rows sum to one") {
    RngStream rng(4, 1);
    Tensor q = Tensor::randn({5, 3}, rng);
    Tensor k = Tensor::randn({5, 3}, rng);
    Tensor scores = mul_scalar(matmul(q, transpose(k)), 1.0 / std::sqrt(3.0));
    Tensor w = softmax_lastdim(scores);
    for (std::size_t r = 0; r < 5; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 5; ++c) s += w.at({r, c});
        CHECK(std::abs(s - 1.0) < 1e-12);
    }
}

TEST_CASE("causal attention output ignores future inputs") {
    RngStream rng(5, 1);
    Tensor x = Tensor::randn({4, 6}, rng);
    AttentionConfig cfg{6, 2, 4, 0.0};
    RngStream wrng(6, 0);
    MultiHeadAttention mha = MultiHeadAttention::init(cfg, wrng);
    Tensor out1 = mha.forward(x, x, /*causal=*/true);
    // perturb the last row only
    Tensor x2 = x.detached_copy();
    for (std::size_t c = 0; c < 6; ++c) x2.value()[3 * 6 + c] += 7.0;
    Tensor out2 = mha.forward(x2, x2, /*causal=*/true);
    for (std::size_t r = 0; r < 3; ++r)
        for (std::size_t c = 0; c < 6; ++c)
            CHECK(out1.at({r, c}) == doctest::Approx(out2.at({r, c})).epsilon(1e-12));
}

TEST_CASE("query shift invariance propagates when key rows have equal sums") {
    // q_i -> q_i + c*1 changes score[i][j] by c*sum(k_j); with equal key row
    // sums that is a row-constant shift, which softmax ignores.
    RngStream rng(12, 3);
    Tensor q = Tensor::randn({4, 4}, rng);
    Tensor k = Tensor::randn({4, 4}, rng);
    for (std::size_t r = 0; r < 4; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < 4; ++c) s += k.at({r, c});
        for (std::size_t c = 0; c < 4; ++c) k.value()[r * 4 + c] -= s / 4.0;  // row sums 0
    }
    Tensor v = Tensor::randn({4, 4}, rng);
    Tensor q_shifted = add_scalar(q, 2.5);
    Tensor a = scaled_dot_product_attention(q, k, v);
    Tensor b = scaled_dot_product_attention(q_shifted, k, v);
    for (std::size_t i = 0; i < a.size(); ++i)
        CHECK(a.value()[i] == doctest::Approx(b.value()[i]).epsilon(1e-12));
}

TEST_CASE("multi-head with H=1 equals plain attention on projections") {
    AttentionConfig cfg{4, 1, 3, 0.0};
    RngStream rng(7, 0);
    MultiHeadAttention mha = MultiHeadAttention::init(cfg, rng);
    RngStream xrng(8, 0);
    Tensor x = Tensor::randn({3, 4}, xrng);
    Tensor q = add(matmul(x, mha.w_q), mha.b_q);
    Tensor k = add(matmul(x, mha.w_k), mha.b_k);
    Tensor v = add(matmul(x, mha.w_v), mha.b_v);
    Tensor manual = add(matmul(scaled_dot_product_attention(q, k, v), mha.w_o), mha.b_o);
    Tensor out = mha.forward(x, x);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(out.value()[i] == doctest::Approx(manual.value()[i]).epsilon(1e-12));
}

TEST_CASE("multi-head attention preserves shape for several configs") {
    for (std::size_t heads : {1ul, 2ul, 4ul}) {
        AttentionConfig cfg{8, heads, 5, 0.0};
        RngStream rng(heads, 0);
        MultiHeadAttention mha = MultiHeadAttention::init(cfg, rng);
        RngStream xrng(heads, 1);
        Tensor x = Tensor::randn({5, 8}, xrng);
        CHECK(mha.forward(x, x).shape() == Shape{5, 8});
        Tensor xb = Tensor::randn({3, 5, 8}, xrng);
        CHECK(mha.forward(xb, xb).shape() == Shape{3, 5, 8});
    }
}

TEST_CASE("embed_dim must divide num_heads") {
    AttentionConfig cfg{6, 4, 3, 0.0};
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("multi-head attention gradient check on all projections") {
    AttentionConfig cfg{4, 2, 3, 0.0};
    RngStream rng(9, 0);
    MultiHeadAttention mha = MultiHeadAttention::init(cfg, rng);
    RngStream xrng(9, 1);
    Tensor x = Tensor::randn({3, 4}, xrng, 1.0, Dtype::f64, true);
    Tensor probe = Tensor::randn({3, 4}, xrng);
    std::vector<Tensor> params{x,       mha.w_q, mha.b_q, mha.w_k, mha.b_k,
                               mha.w_v, mha.b_v, mha.w_o, mha.b_o};
    const double err =
        gradient_check([&] { return sum_all(mul(mha.forward(x, x), probe)); }, params);
    CHECK(err < 1e-5);
}

TEST_CASE("positional encoding basics") {
    Tensor pe = positional_encoding(16, 8);
    // position 0 alternates 0, 1
    for (std::size_t c = 0; c < 8; c += 2) {
        CHECK(pe.at({0, c}) == 0.0);
        CHECK(pe.at({0, c + 1}) == 1.0);
    }
    for (double v : pe.value()) {
        CHECK(v >= -1.0);
        CHECK(v <= 1.0);
    }
}

TEST_CASE("positional encoding rows are distinct (exhaustive small sweep)") {
    for (std::size_t d : {2ul, 4ul, 16ul, 64ul}) {
        const std::size_t k = d <= 16 ? 512 : 128;
        Tensor pe = positional_encoding(k, d);
        for (std::size_t p = 0; p + 1 < k; ++p) {
            bool differs = false;
            for (std::size_t c = 0; c < d && !differs; ++c)
                if (pe.at({p, c}) != pe.at({p + 1, c})) differs = true;
            CHECK(differs);
        }
        // spot-check non-adjacent pairs
        for (std::size_t p = 0; p < k; p += 37)
            for (std::size_t q = p + 7; q < k; q += 101) {
                bool differs = false;
                for (std::size_t c = 0; c < d && !differs; ++c)
                    if (pe.at({p, c}) != pe.at({q, c})) differs = true;
                CHECK(differs);
            }
    }
}

TEST_CASE("encoder block preserves shape and is identity with zeroed outputs") {
    AttentionConfig cfg{6, 2, 4, 0.0};
    RngStream rng(10, 0);
    EncoderBlock block = EncoderBlock::init(cfg, 12, rng);
    RngStream xrng(10, 1);
    Tensor x = Tensor::randn({4, 6}, xrng);
    CHECK(block.forward(x).shape() == Shape{4, 6});

    // zero the attention and FFN output projections: residual path only
    EncoderBlock zeroed = EncoderBlock::init(cfg, 12, rng);
    std::fill(zeroed.mha.w_o.value().begin(), zeroed.mha.w_o.value().end(), 0.0);
    std::fill(zeroed.mha.b_o.value().begin(), zeroed.mha.b_o.value().end(), 0.0);
    std::fill(zeroed.ffn_w2.value().begin(), zeroed.ffn_w2.value().end(), 0.0);
    std::fill(zeroed.ffn_b2.value().begin(), zeroed.ffn_b2.value().end(), 0.0);
    Tensor y = zeroed.forward(x);
    for (std::size_t i = 0; i < x.size(); ++i)
        CHECK(y.value()[i] == doctest::Approx(x.value()[i]).epsilon(1e-12));
}

TEST_CASE("encoder block full gradient check") {
    AttentionConfig cfg{4, 2, 3, 0.0};
    RngStream rng(11, 0);
    EncoderBlock block = EncoderBlock::init(cfg, 8, rng);
    RngStream xrng(11, 1);
    Tensor x = Tensor::randn({3, 4}, xrng, 1.0, Dtype::f64, true);
    Tensor probe = Tensor::randn({3, 4}, xrng);
    nn::NamedParams named;
    block.named_params("blk", named);
    std::vector<Tensor> params{x};
    for (auto& [n, t] : named) params.push_back(t);
    const double err =
        gradient_check([&] { return sum_all(mul(block.forward(x), probe)); }, params);
    CHECK(err < 1e-5);
}

TEST_CASE("dropout scales kept entries and is off at rate 0") {
    RngStream rng(13, 0);
    Tensor x = Tensor::full({1000}, 1.0);
    Tensor kept = dropout(x, 0.0, &rng);
    CHECK(kept.value() == x.value());
    Tensor dropped = dropout(x, 0.5, &rng);
    std::size_t zeros = 0;
    for (double v : dropped.value()) {
        if (v == 0.0) ++zeros;
        else CHECK(v == doctest::Approx(2.0));
    }
    CHECK(zeros > 350);
    CHECK(zeros < 650);
}
