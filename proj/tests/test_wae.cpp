#include <doctest.h>

#include <cmath>

#include "dlspf/wae.hpp"
#include "support.hpp"

using namespace dlspf;
using namespace dlspf::ad;
using namespace dlspf::surrogate;
using dlspf::testing::gradient_check;

namespace {

AeConfig tiny_ae_config(std::size_t length = 32, std::size_t latent = 4,
                        std::size_t param_dim = 0) {
    AeConfig cfg;
    cfg.state_channels = 1;
    cfg.state_length = length;
    cfg.latent_dim = latent;
    cfg.param_dim = param_dim;
    PatchSpec enc;
    enc.num_patches = 4;
    enc.in_channels = 1;
    enc.in_length = length;
    enc.embed_dim = 8;
    enc.num_heads = 2;
    enc.out_channels = 2;
    enc.out_patch_len = length / 8;  // halves the length
    PatchSpec dec;
    dec.num_patches = 4;
    dec.in_channels = 2;
    dec.in_length = length / 2;
    dec.embed_dim = 8;
    dec.num_heads = 2;
    dec.out_channels = 1;
    dec.out_patch_len = length / 4;  // restores the length
    cfg.encoder_layers = {enc};
    cfg.decoder_layers = {dec};
    cfg.validate();
    return cfg;
}

Tensor smooth_batch(std::size_t n, std::size_t length, std::uint64_t seed) {
    Tensor out({n, 1, length}, Dtype::f64, false);
    RngStream rng(seed, 1);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = rng.uniform(0.2, 0.8);
        const double ph = rng.uniform(0.0, 2 * M_PI);
        for (std::size_t j = 0; j < length; ++j)
            out.value()[i * length + j] =
                0.5 + 0.4 * a * std::sin(2 * M_PI * j / double(length) + ph);
    }
    return out;
}

}  // namespace

TEST_CASE("patch split matches the spec shape arithmetic") {
    Tensor x = Tensor::zeros({2, 8});
    Tensor patches = patch_split(x, 2);
    CHECK(patches.shape() == Shape{2, 8});  // 2 patches, each flattened 2x4
    Tensor back = patch_merge(patches, 2, 4);
    CHECK(back.shape() == Shape{2, 8});

    Tensor one = patch_split(x, 1);
    CHECK(one.shape() == Shape{1, 16});
    CHECK(patch_merge(one, 2, 8).value() == x.value());

    CHECK_THROWS_AS(patch_split(x, 3), ConfigError);  // indivisible
}

TEST_CASE("patchify/unpatchify are mutually inverse for all divisible pairs") {
    RngStream rng(4, 2);
    for (std::size_t nx : {8ul, 12ul, 24ul}) {
        Tensor x = Tensor::randn({3, nx}, rng);
        for (std::size_t p = 1; p <= nx; ++p) {
            if (nx % p != 0) continue;
            Tensor e = patch_split(x, p);
            Tensor back = patch_merge(e, 3, nx / p);
            CHECK(back.value() == x.value());
        }
    }
}

TEST_CASE("vit layer forced shape arithmetic (reduction and expansion)") {
    RngStream rng(1, 0);
    PatchSpec spec;
    spec.num_patches = 8;
    spec.in_channels = 1;
    spec.in_length = 256;
    spec.embed_dim = 16;
    spec.num_heads = 2;
    spec.out_channels = 4;
    spec.out_patch_len = 16;
    VitLayer reduce = VitLayer::init(spec, rng);
    Tensor x = Tensor::randn({1, 256}, rng);
    Tensor y = reduce.forward(x);
    CHECK(y.shape() == Shape{4, 128});

    PatchSpec expand;
    expand.num_patches = 8;
    expand.in_channels = 4;
    expand.in_length = 128;
    expand.embed_dim = 16;
    expand.num_heads = 2;
    expand.out_channels = 1;
    expand.out_patch_len = 32;
    VitLayer grow = VitLayer::init(expand, rng);
    CHECK(grow.forward(y).shape() == Shape{1, 256});
}

TEST_CASE("vit layer gradient check") {
    RngStream rng(2, 0);
    PatchSpec spec;
    spec.num_patches = 2;
    spec.in_channels = 1;
    spec.in_length = 8;
    spec.embed_dim = 6;
    spec.num_heads = 2;
    spec.out_channels = 2;
    spec.out_patch_len = 2;
    VitLayer layer = VitLayer::init(spec, rng);
    Tensor x = Tensor::randn({1, 8}, rng, 1.0, Dtype::f64, true);
    Tensor probe = Tensor::randn({2, 4}, rng);
    nn::NamedParams named;
    layer.named_params("l", named);
    std::vector<Tensor> params{x};
    for (auto& [n, t] : named) params.push_back(t);
    const double err =
        gradient_check([&] { return sum_all(mul(layer.forward(x), probe)); }, params);
    CHECK(err < 1e-5);
}

TEST_CASE("vit layer preserves batch independence exactly") {
    RngStream rng(3, 0);
    PatchSpec spec;
    spec.num_patches = 4;
    spec.in_channels = 2;
    spec.in_length = 16;
    spec.embed_dim = 8;
    spec.num_heads = 2;
    spec.out_channels = 1;
    spec.out_patch_len = 4;
    VitLayer layer = VitLayer::init(spec, rng);
    Tensor batch = Tensor::randn({3, 2, 16}, rng);
    Tensor batched = layer.forward(batch);
    for (std::size_t i = 0; i < 3; ++i) {
        Tensor item = reshape(slice(batch, 0, i, i + 1), {2, 16});
        Tensor single = layer.forward(item);
        for (std::size_t k = 0; k < single.size(); ++k)
            CHECK(batched.value()[i * single.size() + k] == single.value()[k]);
    }
}

TEST_CASE("encode/decode shapes, determinism, and parameter guards") {
    const AeConfig cfg = tiny_ae_config(32, 4, 0);
    Autoencoder ae = Autoencoder::init(cfg, 5);
    RngStream rng(6, 0);
    Tensor q = Tensor::randn({1, 32}, rng);
    Tensor z1 = ae.encode(q);
    Tensor z2 = ae.encode(q);
    CHECK(z1.shape() == Shape{4});
    CHECK(z1.value() == z2.value());
    Tensor rec = ae.decode(z1);
    CHECK(rec.shape() == Shape{1, 32});
    CHECK_THROWS_AS(ae.decode(z1, Tensor::zeros({1})), ConfigError);  // not parameterized

    const AeConfig pcfg = tiny_ae_config(32, 4, 1);
    Autoencoder pae = Autoencoder::init(pcfg, 5);
    CHECK_THROWS_AS(pae.decode(z1), ConfigError);  // missing parameters
    Tensor m = Tensor::from_data({1}, {0.3});
    CHECK(pae.decode(z1, m).shape() == Shape{1, 32});
}

TEST_CASE("full autoencoder gradient check (small config)") {
    AeConfig cfg = tiny_ae_config(8, 2);
    cfg.encoder_layers[0].num_patches = 2;
    cfg.encoder_layers[0].embed_dim = 4;
    cfg.encoder_layers[0].out_patch_len = 2;  // out length 4
    cfg.decoder_layers[0].num_patches = 2;
    cfg.decoder_layers[0].in_length = 4;
    cfg.decoder_layers[0].embed_dim = 4;
    cfg.decoder_layers[0].out_patch_len = 4;  // back to 8
    cfg.validate();
    Autoencoder ae = Autoencoder::init(cfg, 7);
    RngStream rng(8, 0);
    Tensor q = Tensor::randn({2, 1, 8}, rng);
    auto params = ae.params();
    const double err = gradient_check(
        [&] { return mse(ae.decode(ae.encode(q)), q); }, params, 1e-5);
    CHECK(err < 1e-5);
}

TEST_CASE("multiquadratics kernel anchors") {
    Tensor a = Tensor::from_data({1, 1}, {0.0});
    Tensor b = Tensor::from_data({1, 1}, {1.0});
    // k(a,a) = 1 at C=1; k with squared distance 1 gives 0.5
    Tensor d_same = pairwise_sqdist(a, a);
    Tensor d_one = pairwise_sqdist(a, b);
    Tensor k_same = mul_scalar(reciprocal(add_scalar(d_same, 1.0)), 1.0);
    Tensor k_one = mul_scalar(reciprocal(add_scalar(d_one, 1.0)), 1.0);
    CHECK(k_same.item() == 1.0);
    CHECK(k_one.item() == 0.5);
}

TEST_CASE("mmd worked example: N=2, encoded {0,1}, prior {0,1}, C=1 gives -0.5") {
    Tensor enc = Tensor::from_data({2, 1}, {0.0, 1.0});
    Tensor prior = Tensor::from_data({2, 1}, {0.0, 1.0});
    CHECK(mmd_loss(enc, prior, 1.0).item() == doctest::Approx(-0.5).epsilon(1e-15));
}

TEST_CASE("mmd equals the brute-force double loop on random inputs") {
    RngStream rng(9, 0);
    for (int rep = 0; rep < 10; ++rep) {
        const std::size_t n = 2 + rng.next_below(30);
        const std::size_t dim = 1 + rng.next_below(8);
        Tensor enc = Tensor::randn({n, dim}, rng);
        Tensor prior = Tensor::randn({n, dim}, rng);
        const double c = 2.0 * static_cast<double>(dim);
        auto kernel = [&](const double* x, const double* y) {
            double d2 = 0.0;
            for (std::size_t k = 0; k < dim; ++k) d2 += (x[k] - y[k]) * (x[k] - y[k]);
            return c / (c + d2);
        };
        double within = 0.0, cross = 0.0;
        for (std::size_t l = 0; l < n; ++l)
            for (std::size_t j = 0; j < n; ++j) {
                if (l != j)
                    within += kernel(&enc.value()[l * dim], &enc.value()[j * dim]) +
                              kernel(&prior.value()[l * dim], &prior.value()[j * dim]);
                cross += kernel(&enc.value()[l * dim], &prior.value()[j * dim]);
            }
        const double brute =
            within / static_cast<double>(n * (n - 1)) - 2.0 * cross / static_cast<double>(n * n);
        CHECK(mmd_loss(enc, prior, 0.0).item() == doctest::Approx(brute).epsilon(1e-10));
    }
}

TEST_CASE("unbiased mmd can be negative; V-statistic self-distance is >= 0") {
    RngStream rng(10, 0);
    Tensor set = Tensor::randn({8, 2}, rng);
    CHECK(mmd_vstat(set, set, 4.0).item() >= -1e-14);
    // same distribution, finite N: the unbiased statistic fluctuates around 0
    bool saw_negative = false;
    for (int rep = 0; rep < 20 && !saw_negative; ++rep) {
        Tensor a = Tensor::randn({6, 2}, rng);
        Tensor b = Tensor::randn({6, 2}, rng);
        if (mmd_loss(a, b, 4.0).item() < 0.0) saw_negative = true;
    }
    CHECK(saw_negative);
    // lower bound: -2 sup k = -2
    for (int rep = 0; rep < 10; ++rep) {
        Tensor a = Tensor::randn({6, 3}, rng);
        Tensor b = Tensor::randn({6, 3}, rng);
        CHECK(mmd_loss(a, b, 6.0).item() >= -2.0);
    }
}

TEST_CASE("mmd requires N >= 2 equal-size sets") {
    Tensor one = Tensor::zeros({1, 2});
    Tensor two = Tensor::zeros({2, 2});
    CHECK_THROWS_AS(mmd_loss(one, one, 1.0), ShapeError);
    CHECK_THROWS_AS(mmd_loss(two, one, 1.0), ShapeError);
}

TEST_CASE("consistency penalty: exact inverse gives exactly zero") {
    RngStream rng(11, 0);
    Tensor z = Tensor::randn({5, 3}, rng);
    CHECK(consistency_penalty(z, z).item() == 0.0);
    Tensor noisy = add_scalar(z, 0.1);
    CHECK(consistency_penalty(z, noisy).item() > 0.0);
}

TEST_CASE("consistency loss is non-negative on a real autoencoder") {
    Autoencoder ae = Autoencoder::init(tiny_ae_config(), 12);
    RngStream rng(12, 0);
    Tensor z = Tensor::randn({4, 4}, rng);
    CHECK(consistency_loss(ae, z, Tensor()).item() >= 0.0);
}

TEST_CASE("min-max normalization anchors and round trip") {
    NormStats stats;
    stats.q_min = {2.0};
    stats.q_max = {4.0};
    Tensor q = Tensor::from_data({1, 3}, {2.0, 3.0, 4.0});
    Tensor n = minmax_normalize(q, stats);
    CHECK(n.value() == std::vector<double>{0.0, 0.5, 1.0});
    Tensor back = minmax_denormalize(n, stats);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(back.value()[i] == doctest::Approx(q.value()[i]).epsilon(1e-12));
}

TEST_CASE("degenerate channel maps to 0.5 and denormalizes to the min") {
    NormStats stats;
    stats.q_min = {3.0};
    stats.q_max = {3.0};
    Tensor q = Tensor::from_data({1, 2}, {3.0, 3.0});
    Tensor n = minmax_normalize(q, stats);
    CHECK(n.value() == std::vector<double>{0.5, 0.5});
    Tensor back = minmax_denormalize(n, stats);
    CHECK(back.value() == std::vector<double>{3.0, 3.0});
}

TEST_CASE("norm stats map the training set into [0, 1]") {
    Tensor snaps = smooth_batch(20, 16, 99);
    NormStats stats = compute_norm_stats(snaps, Tensor());
    Tensor n = minmax_normalize(snaps, stats);
    for (double v : n.value()) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }
    // round trip identity on non-degenerate channels
    Tensor back = minmax_denormalize(n, stats);
    for (std::size_t i = 0; i < snaps.size(); ++i)
        CHECK(back.value()[i] == doctest::Approx(snaps.value()[i]).epsilon(1e-12));
}

TEST_CASE("wae total loss bookkeeping") {
    Autoencoder ae = Autoencoder::init(tiny_ae_config(), 13);
    Tensor batch = smooth_batch(6, 32, 100);
    RngStream rng(13, 1);
    Tensor prior = Tensor::randn({6, 4}, rng);

    WaeLossWeights zero;
    zero.alpha = zero.beta = zero.lambda = 0.0;
    WaeLossParts parts;
    Tensor pure = wae_total_loss(ae, batch, Tensor(), prior, zero, &parts);
    CHECK(pure.item() == doctest::Approx(parts.recon).epsilon(1e-15));

    WaeLossWeights w;
    w.alpha = 1e-6;
    w.beta = 0.4;
    w.lambda = 0.2;
    Tensor total = wae_total_loss(ae, batch, Tensor(), prior, w, &parts);
    const double recombined =
        parts.recon + w.alpha * parts.reg + w.beta * parts.mmd + w.lambda * parts.consistency;
    CHECK(total.item() == doctest::Approx(recombined).epsilon(1e-12));
    CHECK(parts.recon >= 0.0);
    CHECK(parts.reg >= 0.0);
    CHECK(parts.consistency >= 0.0);
    CHECK(parts.mmd >= -2.0);
}

TEST_CASE("training reduces the loss and is bit-reproducible") {
    Tensor snaps = smooth_batch(64, 32, 123);
    NormStats stats = compute_norm_stats(snaps, Tensor());
    Tensor normed = minmax_normalize(snaps, stats);

    AeTrainConfig tc;
    tc.epochs = 8;
    tc.batch_size = 16;
    tc.seed = 42;
    tc.lr = {3e-3, 20, 1, 1e-4};
    tc.weights.beta = 0.1;
    tc.weights.lambda = 0.05;

    Autoencoder ae1 = Autoencoder::init(tiny_ae_config(), 42);
    const auto h1 = train_autoencoder(ae1, normed, Tensor(), tc);
    CHECK(h1.size() == 8);
    CHECK(h1.back().total < h1.front().total);
    CHECK(h1.back().recon < h1.front().recon);

    Autoencoder ae2 = Autoencoder::init(tiny_ae_config(), 42);
    const auto h2 = train_autoencoder(ae2, normed, Tensor(), tc);
    auto p1 = ae1.named_params();
    auto p2 = ae2.named_params();
    REQUIRE(p1.size() == p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) {
        CHECK(p1[i].first == p2[i].first);
        CHECK(p1[i].second.value() == p2[i].second.value());  // bit identical
    }
}

TEST_CASE("checkpoint round trip reproduces encode/decode bit-exactly") {
    Autoencoder ae = Autoencoder::init(tiny_ae_config(32, 4, 1), 77);
    auto enc_ckpt = ae.encoder_checkpoint("h");
    auto dec_ckpt = ae.decoder_checkpoint("h");
    Autoencoder back = Autoencoder::from_checkpoints(ae.cfg, enc_ckpt, dec_ckpt);
    RngStream rng(14, 0);
    Tensor q = Tensor::randn({2, 1, 32}, rng);
    Tensor m = Tensor::from_data({2, 1}, {0.25, 0.75});
    CHECK(back.encode(q).value() == ae.encode(q).value());
    Tensor z = ae.encode(q);
    CHECK(back.decode(z, m).value() == ae.decode(z, m).value());
}

TEST_CASE("latent observe goes decode -> denormalize -> observe") {
    Autoencoder ae = Autoencoder::init(tiny_ae_config(), 20);
    NormStats stats;
    stats.q_min = {-1.0};
    stats.q_max = {3.0};
    da::ObservationOperator h;
    h.indices = {0, 5, 31};
    da::LatentAugmentedState a;
    a.z = {0.1, -0.2, 0.3, 0.0};
    const auto y = latent_observe(a, ae, h, stats);
    CHECK(y.size() == 3);
    // manual path
    Tensor z = Tensor::from_data({4}, a.z);
    Tensor dec = ae.decode(z);
    std::vector<double> q = dec.value();
    denormalize_state_flat(q, 1, stats);
    CHECK(y[0] == q[0]);
    CHECK(y[1] == q[5]);
    CHECK(y[2] == q[31]);
    // batch decode agrees with the single path
    auto batch = decode_denormalize_batch(ae, stats, a.z, {}, 1);
    CHECK(batch[0] == q);
}
