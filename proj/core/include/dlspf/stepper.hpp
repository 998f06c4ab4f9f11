#pragma once

#include <cstdint>
#include <vector>

#include "dlspf/attention.hpp"
#include "dlspf/io.hpp"
#include "dlspf/optim.hpp"
#include "dlspf/tensor.hpp"

namespace dlspf::surrogate {

struct StepperConfig {
    std::size_t latent_dim = 16;
    std::size_t memory = 8;    // k: the step consumes k+1 past latent states
    std::size_t unroll = 4;    // s: training rollout depth
    std::size_t param_dim = 0; // > 0 prepends an encoded parameter token
    std::size_t embed_dim = 32;
    std::size_t num_blocks = 1;
    std::size_t num_heads = 2;
    std::size_t ffn_hidden = 0;  // 0 -> 2 * embed_dim
    ad::Activation act = ad::Activation::gelu;
    ad::Dtype dtype = ad::Dtype::f64;

    std::size_t window() const { return memory + 1; }
    std::size_t seq_len() const { return window() + (param_dim > 0 ? 1 : 0); }
    void validate() const;
};

// Causal transformer over [param token, z_{n-k} ... z_n]; the next latent
// state is read from the final position's output head.
struct LatentStepper {
    StepperConfig cfg;
    ad::Tensor param_w, param_b;  // parameter encoder g, param_dim -> embed
    ad::Tensor lift_w, lift_b;    // latent -> embed
    ad::Tensor pos;               // [seq_len x embed], fixed
    std::vector<nn::EncoderBlock> blocks;
    ad::Tensor head_w, head_b;    // embed -> latent

    static LatentStepper init(const StepperConfig& cfg, std::uint64_t seed,
                              std::uint64_t stream_tag = 2);

    // m: [param_dim] or [B, param_dim] -> token [embed] / [B, embed].
    ad::Tensor param_encode(const ad::Tensor& m) const;
    // history: [k+1, latent] or [B, k+1, latent] -> [latent] / [B, latent].
    ad::Tensor step(const ad::Tensor& history, const ad::Tensor& m = ad::Tensor()) const;

    // Left-pads by repeating the earliest state when fewer than k+1 states
    // are available.
    static std::vector<double> pad_history(const std::vector<std::vector<double>>& states,
                                           std::size_t window, std::size_t latent_dim);

    // Deterministic recursive rollout; returns the given history followed by
    // `steps` predictions, [len(history)+steps][latent].
    std::vector<std::vector<double>> rollout(const std::vector<std::vector<double>>& initial,
                                             const std::vector<double>& m,
                                             std::size_t steps) const;

    nn::NamedParams named_params();
    std::vector<ad::Tensor> params();
    io::Checkpoint to_checkpoint(const std::string& config_hash) const;
    static LatentStepper from_checkpoint(const StepperConfig& cfg, const io::Checkpoint& ckpt);
};

// Recursive unrolled squared-error: sum over i of mse(f^i(hist), targets[i]),
// with each prediction fed back into the sliding window (no teacher forcing).
ad::Tensor unrolled_loss(const LatentStepper& model, const ad::Tensor& history,
                         const std::vector<ad::Tensor>& targets,
                         const ad::Tensor& m = ad::Tensor());

struct StepperTrainConfig {
    std::size_t epochs = 60;
    std::size_t batch_size = 16;
    std::size_t windows_per_epoch = 2048;  // sampled training windows
    LrSchedule lr{1e-3, 100, 1, 1e-5};
    double clip_norm = 1.0;
    double alpha = 1e-8;  // weight regularization
    std::uint64_t seed = 0;
    std::uint64_t stream_tag = 2;
};

struct StepperHistoryRow {
    std::size_t epoch = 0;
    double loss = 0.0;
    double reg = 0.0;
};

// latents: [n_traj, T, latent]; params: [n_traj, param_dim] or undefined.
// Minimizes the recursive s-step unrolled squared error (no teacher
// forcing) plus alpha * sum of squared weights.
std::vector<StepperHistoryRow> train_stepper(LatentStepper& model, const ad::Tensor& latents,
                                             const ad::Tensor& params,
                                             const StepperTrainConfig& cfg);

}  // namespace dlspf::surrogate
