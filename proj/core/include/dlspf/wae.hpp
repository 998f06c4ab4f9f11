#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dlspf/assimilation.hpp"
#include "dlspf/attention.hpp"
#include "dlspf/io.hpp"
#include "dlspf/optim.hpp"
#include "dlspf/tensor.hpp"

namespace dlspf::surrogate {

using ad::Tensor;

// One transformer dimensionality reduction/expansion layer: the input
// signal is cut into p equal patches, each patch is flattened and embedded,
// a transformer encoder layer exchanges information between patches, and a
// per-patch projection reshapes to the output channel/length plan.
struct PatchSpec {
    std::size_t num_patches = 8;
    std::size_t in_channels = 1;
    std::size_t in_length = 128;
    std::size_t embed_dim = 32;
    std::size_t num_heads = 2;
    std::size_t ffn_hidden = 0;  // 0 -> 2 * embed_dim
    std::size_t out_channels = 2;
    std::size_t out_patch_len = 8;

    std::size_t patch_len() const { return in_length / num_patches; }
    std::size_t in_features() const { return in_channels * patch_len(); }
    std::size_t out_features() const { return out_channels * out_patch_len; }
    std::size_t out_length() const { return num_patches * out_patch_len; }
    void validate() const;
};

struct VitLayer {
    PatchSpec spec;
    Tensor w_embed, b_embed;
    Tensor pos;  // fixed sinusoidal encoding, [p x embed_dim]
    nn::EncoderBlock block;
    Tensor w_out, b_out;

    static VitLayer init(const PatchSpec& spec, RngStream& rng, ad::Dtype dtype = ad::Dtype::f64,
                         ad::Activation act = ad::Activation::gelu);
    Tensor forward(const Tensor& x) const;  // [.., C, X] -> [.., C', X']
    void named_params(const std::string& prefix, nn::NamedParams& out);
};

// Per-channel training min/max for states plus per-component min/max for
// parameters; all data is mapped into [0, 1] before entering the networks.
struct NormStats {
    std::vector<double> q_min, q_max;  // per state channel
    std::vector<double> m_min, m_max;  // per parameter component

    void validate() const;
    io::Checkpoint to_checkpoint() const;
    static NormStats from_checkpoint(const io::Checkpoint& ckpt);
};

// stats from snapshots [N, C, X] and optional params [N, Nm].
NormStats compute_norm_stats(const Tensor& snapshots, const Tensor& params);

// Affine per channel; a degenerate channel (max == min) maps to 0.5 and
// denormalizes back to min.
Tensor minmax_normalize(const Tensor& states, const NormStats& stats);
Tensor minmax_denormalize(const Tensor& states_norm, const NormStats& stats);
Tensor minmax_normalize_params(const Tensor& params, const NormStats& stats);
Tensor minmax_denormalize_params(const Tensor& params_norm, const NormStats& stats);
// In-place flat-vector versions for the filter hot path; layout [C * X].
void denormalize_state_flat(std::vector<double>& q, std::size_t channels, const NormStats& stats);
void normalize_state_flat(std::vector<double>& q, std::size_t channels, const NormStats& stats);
void normalize_params_flat(std::vector<double>& m, const NormStats& stats);

struct AeConfig {
    std::size_t state_channels = 1;
    std::size_t state_length = 128;
    std::size_t latent_dim = 16;
    std::size_t param_dim = 0;  // > 0 conditions the decoder on parameters
    std::vector<PatchSpec> encoder_layers;
    std::vector<PatchSpec> decoder_layers;
    ad::Activation act = ad::Activation::gelu;
    ad::Dtype dtype = ad::Dtype::f64;

    void validate() const;
    // Two ViT layers halving the length per level, mirrored in the decoder.
    static AeConfig default_plan(std::size_t channels, std::size_t length, std::size_t latent_dim,
                                 std::size_t param_dim);
};

struct Autoencoder {
    AeConfig cfg;
    std::vector<VitLayer> enc_layers;
    Tensor enc_head_w, enc_head_b;
    Tensor dec_lift_w, dec_lift_b;
    std::vector<VitLayer> dec_layers;

    static Autoencoder init(const AeConfig& cfg, std::uint64_t seed, std::uint64_t stream_tag = 0);

    // q: [C, X] or [B, C, X], normalized; returns [latent] / [B, latent].
    Tensor encode(const Tensor& q) const;
    // z: [latent] or [B, latent]; m required iff cfg.param_dim > 0.
    Tensor decode(const Tensor& z, const Tensor& m = Tensor()) const;

    nn::NamedParams named_params();
    std::vector<Tensor> params();
    io::Checkpoint encoder_checkpoint(const std::string& config_hash) const;
    io::Checkpoint decoder_checkpoint(const std::string& config_hash) const;
    static Autoencoder from_checkpoints(const AeConfig& cfg, const io::Checkpoint& enc,
                                        const io::Checkpoint& dec);
};

struct WaeLossWeights {
    double alpha = 1e-8;   // weight regularization
    double beta = 0.5;     // MMD divergence
    double lambda = 0.05;  // consistency
    double kernel_c = 0.0; // 0 -> 2 * latent_dim
    void validate() const;
};

// Unbiased two-sample MMD^2 with the multiquadratics kernel
// k(a, b) = C / (C + ||a - b||^2). Requires N >= 2 rows in each set.
Tensor mmd_loss(const Tensor& encoded, const Tensor& prior_samples, double kernel_c);
// Biased V-statistic variant (always >= 0 for identical sets).
Tensor mmd_vstat(const Tensor& a, const Tensor& b, double kernel_c);

// Mean over samples of ||z - round_trip||^2.
Tensor consistency_penalty(const Tensor& z_prior, const Tensor& round_trip);
// Mean over samples of ||z - enc(dec(z))||^2 for prior draws z.
Tensor consistency_loss(const Autoencoder& ae, const Tensor& z_prior, const Tensor& m_draws);

struct WaeLossParts {
    double recon = 0.0;
    double reg = 0.0;
    double mmd = 0.0;
    double consistency = 0.0;
    double total = 0.0;
};

// recon + alpha * reg + beta * mmd + lambda * consistency. Components are
// reported through `parts`.
Tensor wae_total_loss(Autoencoder& ae, const Tensor& batch_q, const Tensor& batch_m,
                      const Tensor& prior_draws, const WaeLossWeights& weights,
                      WaeLossParts* parts = nullptr);

struct AeTrainConfig {
    std::size_t epochs = 40;
    std::size_t batch_size = 32;
    LrSchedule lr{1e-3, 100, 1, 1e-5};  // total_steps of 0/1 -> derived from run length
    double clip_norm = 1.0;             // <= 0 disables clipping
    std::uint64_t seed = 0;
    std::uint64_t stream_tag = 1;
    WaeLossWeights weights;
};

struct TrainHistoryRow {
    std::size_t epoch = 0;
    double recon = 0.0;
    double mmd = 0.0;
    double consistency = 0.0;
    double reg = 0.0;
    double total = 0.0;
};

using TrainHistory = std::vector<TrainHistoryRow>;

// snapshots [N, C, X] and params [N, Nm] must already be normalized.
TrainHistory train_autoencoder(Autoencoder& ae, const Tensor& snapshots_norm,
                               const Tensor& params_norm, const AeTrainConfig& cfg);

// decode -> denormalize -> observe, for one latent particle and batched.
std::vector<double> latent_observe(const da::LatentAugmentedState& a, const Autoencoder& ae,
                                   const da::ObservationOperator& h, const NormStats& stats);
// z_flat: [n x latent_dim]; m_flat: [n x param_dim] (empty when param_dim == 0);
// returns n decoded physical states, each [C * X] flat.
std::vector<std::vector<double>> decode_denormalize_batch(const Autoencoder& ae,
                                                          const NormStats& stats,
                                                          const std::vector<double>& z_flat,
                                                          const std::vector<double>& m_flat,
                                                          std::size_t n);

}  // namespace dlspf::surrogate
