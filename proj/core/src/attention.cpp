#include "dlspf/attention.hpp"

#include <cmath>

namespace dlspf::nn {

using namespace dlspf::ad;

void AttentionConfig::validate() const {
    if (embed_dim == 0 || num_heads == 0)
        throw ConfigError("attention: embed_dim and num_heads must be positive");
    if (embed_dim % num_heads != 0)
        throw ConfigError("attention: embed_dim " + std::to_string(embed_dim) +
                          " not divisible by num_heads " + std::to_string(num_heads));
    if (context_length == 0) throw ConfigError("attention: context_length must be >= 1");
    if (dropout_rate < 0.0 || dropout_rate >= 1.0)
        throw ConfigError("attention: dropout_rate must be in [0, 1)");
}

Tensor positional_encoding(std::size_t k, std::size_t d, Dtype dtype) {
    if (k == 0 || d == 0) throw ShapeError("positional_encoding: k, d must be >= 1");
    Tensor pe({k, d}, dtype, false);
    for (std::size_t p = 0; p < k; ++p) {
        for (std::size_t i = 0; i < d; i += 2) {
            const double freq =
                std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
            const double angle = static_cast<double>(p) * freq;
            pe.value()[p * d + i] = std::sin(angle);
            if (i + 1 < d) pe.value()[p * d + i + 1] = std::cos(angle);
        }
    }
    return pe;
}

Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    bool causal) {
    if (q.rank() < 2) throw ShapeError("attention: rank must be >= 2");
    const std::size_t d = q.shape().back();
    Tensor scores = mul_scalar(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(d)));
    if (causal) scores = causal_mask(scores);
    return matmul(softmax_lastdim(scores), v);
}

Tensor dropout(const Tensor& x, double rate, RngStream* rng) {
    if (rate <= 0.0 || rng == nullptr) return x;
    Tensor mask(x.shape(), x.dtype(), false);
    const double keep = 1.0 - rate;
    for (double& m : mask.value()) m = (rng->uniform() < keep) ? 1.0 / keep : 0.0;
    return mul(x, mask);
}

MultiHeadAttention MultiHeadAttention::init(const AttentionConfig& cfg, RngStream& rng,
                                            Dtype dtype) {
    cfg.validate();
    MultiHeadAttention m;
    m.cfg = cfg;
    const std::size_t d = cfg.embed_dim;
    m.w_q = Tensor::xavier(d, d, rng, dtype);
    m.b_q = Tensor::zeros({d}, dtype, true);
    m.w_k = Tensor::xavier(d, d, rng, dtype);
    m.b_k = Tensor::zeros({d}, dtype, true);
    m.w_v = Tensor::xavier(d, d, rng, dtype);
    m.b_v = Tensor::zeros({d}, dtype, true);
    m.w_o = Tensor::xavier(d, d, rng, dtype);
    m.b_o = Tensor::zeros({d}, dtype, true);
    return m;
}

Tensor MultiHeadAttention::forward(const Tensor& x_q, const Tensor& x_kv, bool causal,
                                   RngStream* drop_rng) const {
    const std::size_t d = cfg.embed_dim;
    if (x_q.shape().back() != d || x_kv.shape().back() != d)
        throw ShapeError("multi_head_attention: feature extent != embed_dim");
    Tensor q = add(matmul(x_q, w_q), b_q);
    Tensor k = add(matmul(x_kv, w_k), b_k);
    Tensor v = add(matmul(x_kv, w_v), b_v);
    const std::size_t H = cfg.num_heads;
    const std::size_t dh = cfg.head_dim();
    const std::size_t last = q.rank() - 1;
    std::vector<Tensor> heads;
    heads.reserve(H);
    for (std::size_t h = 0; h < H; ++h) {
        Tensor qh = slice(q, last, h * dh, (h + 1) * dh);
        Tensor kh = slice(k, last, h * dh, (h + 1) * dh);
        Tensor vh = slice(v, last, h * dh, (h + 1) * dh);
        heads.push_back(scaled_dot_product_attention(qh, kh, vh, causal));
    }
    Tensor cat = (H == 1) ? heads[0] : concat(heads, last);
    Tensor out = add(matmul(cat, w_o), b_o);
    return dropout(out, cfg.dropout_rate, drop_rng);
}

void MultiHeadAttention::named_params(const std::string& prefix, NamedParams& out) {
    out.emplace_back(prefix + ".wq", w_q);
    out.emplace_back(prefix + ".bq", b_q);
    out.emplace_back(prefix + ".wk", w_k);
    out.emplace_back(prefix + ".bk", b_k);
    out.emplace_back(prefix + ".wv", w_v);
    out.emplace_back(prefix + ".bv", b_v);
    out.emplace_back(prefix + ".wo", w_o);
    out.emplace_back(prefix + ".bo", b_o);
}

EncoderBlock EncoderBlock::init(const AttentionConfig& cfg, std::size_t ffn_hidden,
                                RngStream& rng, Activation act, Dtype dtype) {
    EncoderBlock b;
    b.mha = MultiHeadAttention::init(cfg, rng, dtype);
    const std::size_t d = cfg.embed_dim;
    b.ln1_gamma = Tensor::full({d}, 1.0, dtype, true);
    b.ln1_beta = Tensor::zeros({d}, dtype, true);
    b.ln2_gamma = Tensor::full({d}, 1.0, dtype, true);
    b.ln2_beta = Tensor::zeros({d}, dtype, true);
    b.ffn_w1 = Tensor::xavier(d, ffn_hidden, rng, dtype);
    b.ffn_b1 = Tensor::zeros({ffn_hidden}, dtype, true);
    b.ffn_w2 = Tensor::xavier(ffn_hidden, d, rng, dtype);
    b.ffn_b2 = Tensor::zeros({d}, dtype, true);
    b.ffn_act = act;
    return b;
}

Tensor EncoderBlock::forward(const Tensor& x, bool causal, RngStream* drop_rng) const {
    Tensor n1 = layer_norm(x, ln1_gamma, ln1_beta);
    Tensor h = add(x, mha.forward(n1, n1, causal, drop_rng));
    Tensor n2 = layer_norm(h, ln2_gamma, ln2_beta);
    Tensor ffn = dense(dense(n2, ffn_w1, ffn_b1, ffn_act), ffn_w2, ffn_b2, Activation::identity);
    return add(h, dropout(ffn, mha.cfg.dropout_rate, drop_rng));
}

void EncoderBlock::named_params(const std::string& prefix, NamedParams& out) {
    out.emplace_back(prefix + ".ln1.gamma", ln1_gamma);
    out.emplace_back(prefix + ".ln1.beta", ln1_beta);
    mha.named_params(prefix + ".mha", out);
    out.emplace_back(prefix + ".ln2.gamma", ln2_gamma);
    out.emplace_back(prefix + ".ln2.beta", ln2_beta);
    out.emplace_back(prefix + ".ffn.w1", ffn_w1);
    out.emplace_back(prefix + ".ffn.b1", ffn_b1);
    out.emplace_back(prefix + ".ffn.w2", ffn_w2);
    out.emplace_back(prefix + ".ffn.b2", ffn_b2);
}

}  // namespace dlspf::nn
