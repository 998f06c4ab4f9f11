#include "dlspf/wae.hpp"

#include <algorithm>
#include <cmath>

#include "dlspf/errors.hpp"

namespace dlspf::surrogate {

using namespace dlspf::ad;

void PatchSpec::validate() const {
    if (num_patches == 0 || in_channels == 0 || in_length == 0 || embed_dim == 0 ||
        out_channels == 0 || out_patch_len == 0)
        throw ConfigError("patch spec: all extents must be positive");
    if (in_length % num_patches != 0)
        throw ConfigError("patch spec: in_length " + std::to_string(in_length) +
                          " not divisible by num_patches " + std::to_string(num_patches));
    if (embed_dim % num_heads != 0)
        throw ConfigError("patch spec: embed_dim not divisible by num_heads");
}

VitLayer VitLayer::init(const PatchSpec& spec, RngStream& rng, Dtype dtype, Activation act) {
    spec.validate();
    VitLayer l;
    l.spec = spec;
    l.w_embed = Tensor::xavier(spec.in_features(), spec.embed_dim, rng, dtype);
    l.b_embed = Tensor::zeros({spec.embed_dim}, dtype, true);
    l.pos = nn::positional_encoding(spec.num_patches, spec.embed_dim, dtype);
    nn::AttentionConfig acfg;
    acfg.embed_dim = spec.embed_dim;
    acfg.num_heads = spec.num_heads;
    acfg.context_length = spec.num_patches;
    const std::size_t hidden = spec.ffn_hidden ? spec.ffn_hidden : 2 * spec.embed_dim;
    l.block = nn::EncoderBlock::init(acfg, hidden, rng, act, dtype);
    l.w_out = Tensor::xavier(spec.embed_dim, spec.out_features(), rng, dtype);
    l.b_out = Tensor::zeros({spec.out_features()}, dtype, true);
    return l;
}

Tensor VitLayer::forward(const Tensor& x) const {
    const Shape& s = x.shape();
    if (s[s.size() - 2] != spec.in_channels || s[s.size() - 1] != spec.in_length)
        throw ShapeError("vit layer: input " + shape_str(s) + " does not match spec " +
                         std::to_string(spec.in_channels) + "x" + std::to_string(spec.in_length));
    Tensor e = patch_split(x, spec.num_patches);
    e = dense(e, w_embed, b_embed, Activation::identity);
    e = add(e, pos);
    e = block.forward(e);
    e = dense(e, w_out, b_out, Activation::identity);
    return patch_merge(e, spec.out_channels, spec.out_patch_len);
}

void VitLayer::named_params(const std::string& prefix, nn::NamedParams& out) {
    out.emplace_back(prefix + ".embed.w", w_embed);
    out.emplace_back(prefix + ".embed.b", b_embed);
    block.named_params(prefix + ".block", out);
    out.emplace_back(prefix + ".out.w", w_out);
    out.emplace_back(prefix + ".out.b", b_out);
}

// ---------------------------------------------------------------- norm stats

void NormStats::validate() const {
    if (q_min.size() != q_max.size() || m_min.size() != m_max.size())
        throw ConfigError("norm stats: min/max size mismatch");
    for (std::size_t i = 0; i < q_min.size(); ++i)
        if (q_max[i] < q_min[i]) throw ConfigError("norm stats: max < min");
    for (std::size_t i = 0; i < m_min.size(); ++i)
        if (m_max[i] < m_min[i]) throw ConfigError("norm stats: max < min");
}

io::Checkpoint NormStats::to_checkpoint() const {
    io::Checkpoint ckpt;
    ckpt.model_kind = "norm_stats";
    auto vec = [](const std::vector<double>& v) {
        return Tensor::from_data({std::max<std::size_t>(v.size(), 1)},
                                 v.empty() ? std::vector<double>{0.0} : v);
    };
    ckpt.add("q_min", vec(q_min));
    ckpt.add("q_max", vec(q_max));
    ckpt.add("m_count", Tensor::from_data({1}, {static_cast<double>(m_min.size())}));
    ckpt.add("m_min", vec(m_min));
    ckpt.add("m_max", vec(m_max));
    return ckpt;
}

NormStats NormStats::from_checkpoint(const io::Checkpoint& ckpt) {
    NormStats s;
    s.q_min = ckpt.find("q_min").value();
    s.q_max = ckpt.find("q_max").value();
    const auto m_count = static_cast<std::size_t>(ckpt.find("m_count").value()[0]);
    if (m_count > 0) {
        s.m_min = ckpt.find("m_min").value();
        s.m_max = ckpt.find("m_max").value();
        s.m_min.resize(m_count);
        s.m_max.resize(m_count);
    }
    s.validate();
    return s;
}

NormStats compute_norm_stats(const Tensor& snapshots, const Tensor& params) {
    if (snapshots.rank() != 3) throw ShapeError("compute_norm_stats: expects [N, C, X]");
    const std::size_t n = snapshots.extent(0);
    const std::size_t c = snapshots.extent(1);
    const std::size_t x = snapshots.extent(2);
    NormStats s;
    s.q_min.assign(c, std::numeric_limits<double>::infinity());
    s.q_max.assign(c, -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* row = snapshots.value().data() + (i * c + ch) * x;
            for (std::size_t j = 0; j < x; ++j) {
                s.q_min[ch] = std::min(s.q_min[ch], row[j]);
                s.q_max[ch] = std::max(s.q_max[ch], row[j]);
            }
        }
    if (params.defined()) {
        if (params.rank() != 2 || params.extent(0) != n)
            throw ShapeError("compute_norm_stats: params must be [N, Nm]");
        const std::size_t nm = params.extent(1);
        s.m_min.assign(nm, std::numeric_limits<double>::infinity());
        s.m_max.assign(nm, -std::numeric_limits<double>::infinity());
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t k = 0; k < nm; ++k) {
                const double v = params.value()[i * nm + k];
                s.m_min[k] = std::min(s.m_min[k], v);
                s.m_max[k] = std::max(s.m_max[k], v);
            }
    }
    s.validate();
    return s;
}

namespace {

inline double norm_one(double v, double lo, double hi) {
    return hi > lo ? (v - lo) / (hi - lo) : 0.5;
}
inline double denorm_one(double v, double lo, double hi) {
    return hi > lo ? lo + v * (hi - lo) : lo;
}

Tensor map_channels(const Tensor& t, const std::vector<double>& lo, const std::vector<double>& hi,
                    bool forward) {
    if (t.rank() < 2) throw ShapeError("minmax: state tensor must be at least [C, X]");
    const std::size_t x = t.shape().back();
    const std::size_t c = t.shape()[t.rank() - 2];
    if (c != lo.size()) throw ShapeError("minmax: channel count does not match stats");
    Tensor out(t.shape(), t.dtype(), false);
    const std::size_t batch = t.size() / (c * x);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const double* src = t.value().data() + (b * c + ch) * x;
            double* dst = out.value().data() + (b * c + ch) * x;
            for (std::size_t j = 0; j < x; ++j)
                dst[j] = forward ? norm_one(src[j], lo[ch], hi[ch])
                                 : denorm_one(src[j], lo[ch], hi[ch]);
        }
    return out;
}

}  // namespace

Tensor minmax_normalize(const Tensor& states, const NormStats& stats) {
    return map_channels(states, stats.q_min, stats.q_max, true);
}

Tensor minmax_denormalize(const Tensor& states_norm, const NormStats& stats) {
    return map_channels(states_norm, stats.q_min, stats.q_max, false);
}

Tensor minmax_normalize_params(const Tensor& params, const NormStats& stats) {
    const std::size_t nm = params.shape().back();
    if (nm != stats.m_min.size()) throw ShapeError("minmax: param count does not match stats");
    Tensor out(params.shape(), params.dtype(), false);
    for (std::size_t i = 0; i < params.size(); ++i)
        out.value()[i] = norm_one(params.value()[i], stats.m_min[i % nm], stats.m_max[i % nm]);
    return out;
}

Tensor minmax_denormalize_params(const Tensor& params_norm, const NormStats& stats) {
    const std::size_t nm = params_norm.shape().back();
    if (nm != stats.m_min.size()) throw ShapeError("minmax: param count does not match stats");
    Tensor out(params_norm.shape(), params_norm.dtype(), false);
    for (std::size_t i = 0; i < params_norm.size(); ++i)
        out.value()[i] = denorm_one(params_norm.value()[i], stats.m_min[i % nm], stats.m_max[i % nm]);
    return out;
}

void denormalize_state_flat(std::vector<double>& q, std::size_t channels, const NormStats& stats) {
    const std::size_t x = q.size() / channels;
    for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t j = 0; j < x; ++j)
            q[ch * x + j] = denorm_one(q[ch * x + j], stats.q_min[ch], stats.q_max[ch]);
}

void normalize_state_flat(std::vector<double>& q, std::size_t channels, const NormStats& stats) {
    const std::size_t x = q.size() / channels;
    for (std::size_t ch = 0; ch < channels; ++ch)
        for (std::size_t j = 0; j < x; ++j)
            q[ch * x + j] = norm_one(q[ch * x + j], stats.q_min[ch], stats.q_max[ch]);
}

void normalize_params_flat(std::vector<double>& m, const NormStats& stats) {
    for (std::size_t i = 0; i < m.size(); ++i)
        m[i] = norm_one(m[i], stats.m_min[i], stats.m_max[i]);
}

// ---------------------------------------------------------------- autoencoder

void AeConfig::validate() const {
    if (latent_dim == 0) throw ConfigError("ae: latent_dim must be positive");
    if (encoder_layers.empty() && decoder_layers.empty()) {
        // identity codec: latent space IS the flattened state
        if (latent_dim != state_channels * state_length || param_dim != 0)
            throw ConfigError("ae: identity codec requires latent_dim == state size and no params");
        return;
    }
    if (encoder_layers.empty() || decoder_layers.empty())
        throw ConfigError("ae: encoder and decoder need at least one layer each");
    std::size_t c = state_channels;
    std::size_t x = state_length;
    for (const auto& l : encoder_layers) {
        l.validate();
        if (l.in_channels != c || l.in_length != x)
            throw ConfigError("ae: encoder layer chain mismatch at " + std::to_string(c) + "x" +
                              std::to_string(x));
        c = l.out_channels;
        x = l.out_length();
    }
    c = decoder_layers.front().in_channels;
    x = decoder_layers.front().in_length;
    for (const auto& l : decoder_layers) {
        l.validate();
        if (l.in_channels != c || l.in_length != x)
            throw ConfigError("ae: decoder layer chain mismatch");
        c = l.out_channels;
        x = l.out_length();
    }
    if (c != state_channels || x != state_length)
        throw ConfigError("ae: decoder output " + std::to_string(c) + "x" + std::to_string(x) +
                          " does not reproduce the state shape");
}

AeConfig AeConfig::default_plan(std::size_t channels, std::size_t length, std::size_t latent_dim,
                                std::size_t param_dim) {
    AeConfig cfg;
    cfg.state_channels = channels;
    cfg.state_length = length;
    cfg.latent_dim = latent_dim;
    cfg.param_dim = param_dim;
    auto layer = [](std::size_t in_c, std::size_t in_x, std::size_t out_c, std::size_t out_x,
                    std::size_t p, std::size_t embed) {
        PatchSpec s;
        s.num_patches = p;
        s.in_channels = in_c;
        s.in_length = in_x;
        s.embed_dim = embed;
        s.num_heads = 2;
        s.out_channels = out_c;
        s.out_patch_len = out_x / p;
        return s;
    };
    // (C x L) -> (2C x L/2) -> (4C x L/4), mirrored on the way out.
    cfg.encoder_layers = {
        layer(channels, length, 2 * channels, length / 2, 16, 32),
        layer(2 * channels, length / 2, 4 * channels, length / 4, 8, 32),
    };
    cfg.decoder_layers = {
        layer(4 * channels, length / 4, 2 * channels, length / 2, 8, 32),
        layer(2 * channels, length / 2, channels, length, 16, 32),
    };
    cfg.validate();
    return cfg;
}

Autoencoder Autoencoder::init(const AeConfig& cfg, std::uint64_t seed, std::uint64_t stream_tag) {
    cfg.validate();
    Autoencoder ae;
    ae.cfg = cfg;
    if (cfg.encoder_layers.empty()) return ae;  // identity codec
    RngStream rng(seed, substream_id(stream_tag, 0xAE, 0));
    for (const auto& spec : cfg.encoder_layers)
        ae.enc_layers.push_back(VitLayer::init(spec, rng, cfg.dtype, cfg.act));
    const auto& last = cfg.encoder_layers.back();
    const std::size_t enc_flat = last.out_channels * last.out_length();
    ae.enc_head_w = Tensor::xavier(enc_flat, cfg.latent_dim, rng, cfg.dtype);
    ae.enc_head_b = Tensor::zeros({cfg.latent_dim}, cfg.dtype, true);
    const auto& first = cfg.decoder_layers.front();
    const std::size_t dec_flat = first.in_channels * first.in_length;
    ae.dec_lift_w = Tensor::xavier(cfg.latent_dim + cfg.param_dim, dec_flat, rng, cfg.dtype);
    ae.dec_lift_b = Tensor::zeros({dec_flat}, cfg.dtype, true);
    for (const auto& spec : cfg.decoder_layers)
        ae.dec_layers.push_back(VitLayer::init(spec, rng, cfg.dtype, cfg.act));
    return ae;
}

Tensor Autoencoder::encode(const Tensor& q) const {
    const bool batched = q.rank() == 3;
    if (q.rank() != 2 && q.rank() != 3)
        throw ShapeError("encode: expects [C, X] or [B, C, X]");
    if (enc_layers.empty())
        return batched ? reshape(q, {q.extent(0), cfg.latent_dim}) : reshape(q, {cfg.latent_dim});
    Tensor h = batched ? q : reshape(q, {1, q.extent(0), q.extent(1)});
    for (const auto& l : enc_layers) h = l.forward(h);
    const std::size_t b = h.extent(0);
    h = reshape(h, {b, h.extent(1) * h.extent(2)});
    h = dense(h, enc_head_w, enc_head_b, Activation::identity);
    return batched ? h : reshape(h, {cfg.latent_dim});
}

Tensor Autoencoder::decode(const Tensor& z, const Tensor& m) const {
    if (cfg.param_dim == 0 && m.defined())
        throw ConfigError("decode: model is not parameterized but parameters were given");
    if (cfg.param_dim > 0 && !m.defined())
        throw ConfigError("decode: parameterized model requires parameter input");
    const bool batched = z.rank() == 2;
    Tensor zin = batched ? z : reshape(z, {1, z.extent(0)});
    if (zin.shape().back() != cfg.latent_dim)
        throw ShapeError("decode: latent dim mismatch");
    if (dec_layers.empty())
        return batched ? reshape(z, {z.extent(0), cfg.state_channels, cfg.state_length})
                       : reshape(z, {cfg.state_channels, cfg.state_length});
    if (cfg.param_dim > 0) {
        Tensor min = (m.rank() == 2) ? m : reshape(m, {1, m.extent(0)});
        if (min.shape().back() != cfg.param_dim || min.extent(0) != zin.extent(0))
            throw ShapeError("decode: parameter input shape mismatch");
        zin = concat({zin, min}, 1);
    }
    Tensor h = dense(zin, dec_lift_w, dec_lift_b, cfg.act);
    const auto& first = cfg.decoder_layers.front();
    h = reshape(h, {h.extent(0), first.in_channels, first.in_length});
    for (const auto& l : dec_layers) h = l.forward(h);
    return batched ? h : reshape(h, {cfg.state_channels, cfg.state_length});
}

nn::NamedParams Autoencoder::named_params() {
    nn::NamedParams out;
    if (enc_layers.empty()) return out;  // identity codec has no parameters
    for (std::size_t i = 0; i < enc_layers.size(); ++i)
        enc_layers[i].named_params("enc.layer" + std::to_string(i), out);
    out.emplace_back("enc.head.w", enc_head_w);
    out.emplace_back("enc.head.b", enc_head_b);
    out.emplace_back("dec.lift.w", dec_lift_w);
    out.emplace_back("dec.lift.b", dec_lift_b);
    for (std::size_t i = 0; i < dec_layers.size(); ++i)
        dec_layers[i].named_params("dec.layer" + std::to_string(i), out);
    return out;
}

std::vector<Tensor> Autoencoder::params() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

namespace {
io::Checkpoint subset_checkpoint(Autoencoder& ae, const std::string& prefix,
                                 const std::string& kind, const std::string& hash) {
    io::Checkpoint ckpt;
    ckpt.model_kind = kind;
    ckpt.config_hash = hash;
    for (auto& [name, t] : ae.named_params())
        if (name.rfind(prefix, 0) == 0) ckpt.add(name, t.detached_copy());
    return ckpt;
}
}  // namespace

io::Checkpoint Autoencoder::encoder_checkpoint(const std::string& config_hash) const {
    return subset_checkpoint(const_cast<Autoencoder&>(*this), "enc.", "wae_encoder", config_hash);
}

io::Checkpoint Autoencoder::decoder_checkpoint(const std::string& config_hash) const {
    return subset_checkpoint(const_cast<Autoencoder&>(*this), "dec.", "wae_decoder", config_hash);
}

Autoencoder Autoencoder::from_checkpoints(const AeConfig& cfg, const io::Checkpoint& enc,
                                          const io::Checkpoint& dec) {
    Autoencoder ae = Autoencoder::init(cfg, 0);
    for (auto& [name, t] : ae.named_params()) {
        const io::Checkpoint& src = (name.rfind("enc.", 0) == 0) ? enc : dec;
        const Tensor& loaded = src.find(name);
        if (loaded.shape() != t.shape())
            throw IoError("checkpoint tensor '" + name + "' has shape " +
                          shape_str(loaded.shape()) + ", expected " + shape_str(t.shape()));
        t.value() = loaded.value();
    }
    return ae;
}

// ---------------------------------------------------------------- losses

void WaeLossWeights::validate() const {
    if (alpha < 0.0 || beta < 0.0 || lambda < 0.0 || kernel_c < 0.0)
        throw ConfigError("wae loss weights must be >= 0");
}

namespace {
Tensor mq_kernel(const Tensor& sqdist, double c) {
    // C / (C + d^2)
    return mul_scalar(reciprocal(add_scalar(sqdist, c)), c);
}
}  // namespace

Tensor mmd_loss(const Tensor& encoded, const Tensor& prior_samples, double kernel_c) {
    if (encoded.rank() != 2 || prior_samples.rank() != 2)
        throw ShapeError("mmd: expects [N, d] sample sets");
    const std::size_t n = encoded.extent(0);
    if (n < 2 || prior_samples.extent(0) != n)
        throw ShapeError("mmd: needs equal sample counts N >= 2");
    const double c = kernel_c > 0.0 ? kernel_c : 2.0 * static_cast<double>(encoded.extent(1));
    Tensor k_zz = mq_kernel(pairwise_sqdist(encoded, encoded), c);
    Tensor k_xx = mq_kernel(pairwise_sqdist(prior_samples, prior_samples), c);
    Tensor k_zx = mq_kernel(pairwise_sqdist(encoded, prior_samples), c);
    const double inv_offdiag = 1.0 / static_cast<double>(n * (n - 1));
    const double inv_cross = 2.0 / static_cast<double>(n * n);
    Tensor within = mul_scalar(add(sum_offdiag(k_zz), sum_offdiag(k_xx)), inv_offdiag);
    Tensor cross = mul_scalar(sum_all(k_zx), inv_cross);
    return sub(within, cross);
}

Tensor mmd_vstat(const Tensor& a, const Tensor& b, double kernel_c) {
    if (a.rank() != 2 || b.rank() != 2) throw ShapeError("mmd_vstat: expects [N, d] sets");
    const double c = kernel_c > 0.0 ? kernel_c : 2.0 * static_cast<double>(a.extent(1));
    const double na = static_cast<double>(a.extent(0));
    const double nb = static_cast<double>(b.extent(0));
    Tensor k_aa = mul_scalar(sum_all(mq_kernel(pairwise_sqdist(a, a), c)), 1.0 / (na * na));
    Tensor k_bb = mul_scalar(sum_all(mq_kernel(pairwise_sqdist(b, b), c)), 1.0 / (nb * nb));
    Tensor k_ab = mul_scalar(sum_all(mq_kernel(pairwise_sqdist(a, b), c)), 2.0 / (na * nb));
    return sub(add(k_aa, k_bb), k_ab);
}

Tensor consistency_penalty(const Tensor& z_prior, const Tensor& round_trip) {
    if (z_prior.rank() != 2) throw ShapeError("consistency: expects [N, latent] draws");
    Tensor diff = sub(z_prior, round_trip);
    return mul_scalar(sum_sq(diff), 1.0 / static_cast<double>(z_prior.extent(0)));
}

Tensor consistency_loss(const Autoencoder& ae, const Tensor& z_prior, const Tensor& m_draws) {
    return consistency_penalty(z_prior, ae.encode(ae.decode(z_prior, m_draws)));
}

Tensor wae_total_loss(Autoencoder& ae, const Tensor& batch_q, const Tensor& batch_m,
                      const Tensor& prior_draws, const WaeLossWeights& weights,
                      WaeLossParts* parts) {
    weights.validate();
    Tensor z = ae.encode(batch_q);
    Tensor recon_q = ae.decode(z, batch_m);
    Tensor recon = mse(recon_q, batch_q);

    Tensor reg;
    for (auto& p : ae.params()) {
        Tensor s = sum_sq(p);
        reg = reg.defined() ? add(reg, s) : s;
    }
    Tensor divergence = mmd_loss(z, prior_draws, weights.kernel_c);
    Tensor consistency = consistency_loss(ae, prior_draws, batch_m);

    Tensor total = recon;
    if (weights.alpha > 0.0) total = add(total, mul_scalar(reg, weights.alpha));
    if (weights.beta > 0.0) total = add(total, mul_scalar(divergence, weights.beta));
    if (weights.lambda > 0.0) total = add(total, mul_scalar(consistency, weights.lambda));
    if (parts != nullptr) {
        parts->recon = recon.item();
        parts->reg = reg.item();
        parts->mmd = divergence.item();
        parts->consistency = consistency.item();
        parts->total = total.item();
    }
    return total;
}

TrainHistory train_autoencoder(Autoencoder& ae, const Tensor& snapshots_norm,
                               const Tensor& params_norm, const AeTrainConfig& cfg) {
    if (snapshots_norm.rank() != 3) throw ShapeError("train_autoencoder: expects [N, C, X]");
    const std::size_t n = snapshots_norm.extent(0);
    const std::size_t c = snapshots_norm.extent(1);
    const std::size_t x = snapshots_norm.extent(2);
    if (ae.cfg.param_dim > 0 && !params_norm.defined())
        throw ConfigError("train_autoencoder: parameterized model needs params");
    const std::size_t bs = std::min<std::size_t>(std::max<std::size_t>(cfg.batch_size, 2), n);
    const std::size_t batches_per_epoch = n / bs;
    if (batches_per_epoch == 0) throw ConfigError("train_autoencoder: batch size exceeds data");

    auto params = ae.params();
    AdamState opt;
    LrSchedule lr = cfg.lr;
    if (lr.total_steps <= 1) lr.total_steps = cfg.epochs * batches_per_epoch;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    TrainHistory history;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngStream shuffle_rng(cfg.seed, substream_id(cfg.stream_tag, 0x50, epoch));
        for (std::size_t i = n; i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.next_below(i)]);
        WaeLossParts epoch_parts;
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            Tensor batch_q({bs, c, x}, ae.cfg.dtype, false);
            Tensor batch_m = ae.cfg.param_dim > 0
                                 ? Tensor({bs, ae.cfg.param_dim}, ae.cfg.dtype, false)
                                 : Tensor();
            for (std::size_t j = 0; j < bs; ++j) {
                const std::size_t src = order[b * bs + j];
                std::copy_n(snapshots_norm.value().data() + src * c * x, c * x,
                            batch_q.value().data() + j * c * x);
                if (batch_m.defined())
                    std::copy_n(params_norm.value().data() + src * ae.cfg.param_dim,
                                ae.cfg.param_dim,
                                batch_m.value().data() + j * ae.cfg.param_dim);
            }
            RngStream prior_rng(cfg.seed, substream_id(cfg.stream_tag, 0x9A, step));
            Tensor prior = Tensor::randn({bs, ae.cfg.latent_dim}, prior_rng, 1.0, ae.cfg.dtype);

            WaeLossParts parts;
            {
                GradientTape tape;
                Tensor loss = wae_total_loss(ae, batch_q, batch_m, prior, cfg.weights, &parts);
                if (!std::isfinite(parts.total))
                    throw TrainingDivergenceError("autoencoder loss became non-finite at step " +
                                                  std::to_string(step));
                tape.backward(loss);
            }
            if (cfg.clip_norm > 0.0) clip_grad_norm(params, cfg.clip_norm);
            opt.lr = lr_at(lr, step);
            adam_step(params, opt);
            for (auto& p : params) p.zero_grad();
            ++step;
            epoch_parts.recon += parts.recon;
            epoch_parts.reg += parts.reg;
            epoch_parts.mmd += parts.mmd;
            epoch_parts.consistency += parts.consistency;
            epoch_parts.total += parts.total;
        }
        const double inv = 1.0 / static_cast<double>(batches_per_epoch);
        history.push_back({epoch, epoch_parts.recon * inv, epoch_parts.mmd * inv,
                           epoch_parts.consistency * inv, epoch_parts.reg * inv,
                           epoch_parts.total * inv});
    }
    return history;
}

// ---------------------------------------------------------------- filter glue

std::vector<double> latent_observe(const da::LatentAugmentedState& a, const Autoencoder& ae,
                                   const da::ObservationOperator& h, const NormStats& stats) {
    Tensor z = Tensor::from_data({a.z.size()}, a.z);
    Tensor m = a.m.empty() ? Tensor() : Tensor::from_data({a.m.size()}, a.m);
    Tensor q_norm = ae.decode(z, m);
    std::vector<double> q = q_norm.value();
    denormalize_state_flat(q, ae.cfg.state_channels, stats);
    return h.observe(q);
}

std::vector<std::vector<double>> decode_denormalize_batch(const Autoencoder& ae,
                                                          const NormStats& stats,
                                                          const std::vector<double>& z_flat,
                                                          const std::vector<double>& m_flat,
                                                          std::size_t n) {
    const std::size_t ld = ae.cfg.latent_dim;
    const std::size_t pd = ae.cfg.param_dim;
    if (z_flat.size() != n * ld) throw ShapeError("decode batch: latent buffer size mismatch");
    Tensor z = Tensor::from_data({n, ld}, z_flat);
    Tensor m;
    if (pd > 0) {
        if (m_flat.size() != n * pd) throw ShapeError("decode batch: param buffer size mismatch");
        m = Tensor::from_data({n, pd}, m_flat);
    }
    Tensor q_norm = ae.decode(z, m);
    const std::size_t dim = ae.cfg.state_channels * ae.cfg.state_length;
    std::vector<std::vector<double>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        out[i].assign(q_norm.value().begin() + i * dim, q_norm.value().begin() + (i + 1) * dim);
        denormalize_state_flat(out[i], ae.cfg.state_channels, stats);
    }
    return out;
}

}  // namespace dlspf::surrogate
