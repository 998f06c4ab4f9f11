#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dlspf/tensor.hpp"

namespace dlspf::nn {

using ad::Tensor;

// Named parameter list; the registry both feeds the optimizer and names
// tensors inside checkpoints.
using NamedParams = std::vector<std::pair<std::string, Tensor>>;

struct AttentionConfig {
    std::size_t embed_dim = 32;
    std::size_t num_heads = 2;
    std::size_t context_length = 1;
    double dropout_rate = 0.0;
    std::size_t head_dim() const { return embed_dim / num_heads; }
    void validate() const;
};

// Sinusoidal positional encoding: row p, channel 2i holds
// sin(p / 10000^(2i/d)), channel 2i+1 the matching cos.
Tensor positional_encoding(std::size_t k, std::size_t d, ad::Dtype dtype = ad::Dtype::f64);

// softmax(Q K^T / sqrt(d)) V over the last two axes; leading axes batch.
// With `causal`, position i attends only to positions <= i.
Tensor scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                    bool causal = false);

// Inverted dropout; identity when rate == 0 or rng == nullptr.
Tensor dropout(const Tensor& x, double rate, RngStream* rng);

struct MultiHeadAttention {
    AttentionConfig cfg;
    Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;

    static MultiHeadAttention init(const AttentionConfig& cfg, RngStream& rng,
                                   ad::Dtype dtype = ad::Dtype::f64);
    // x_q == x_kv is self-attention; distinct inputs give cross-attention.
    Tensor forward(const Tensor& x_q, const Tensor& x_kv, bool causal = false,
                   RngStream* drop_rng = nullptr) const;
    void named_params(const std::string& prefix, NamedParams& out);
};

// Pre-norm transformer encoder block:
//   x + MHA(LN(x)), then + FFN(LN(.)).
struct EncoderBlock {
    MultiHeadAttention mha;
    Tensor ln1_gamma, ln1_beta, ln2_gamma, ln2_beta;
    Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
    ad::Activation ffn_act = ad::Activation::gelu;

    static EncoderBlock init(const AttentionConfig& cfg, std::size_t ffn_hidden, RngStream& rng,
                             ad::Activation act = ad::Activation::gelu,
                             ad::Dtype dtype = ad::Dtype::f64);
    Tensor forward(const Tensor& x, bool causal = false, RngStream* drop_rng = nullptr) const;
    void named_params(const std::string& prefix, NamedParams& out);
};

}  // namespace dlspf::nn
