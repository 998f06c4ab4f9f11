#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dlspf/assimilation.hpp"
#include "dlspf/stepper.hpp"
#include "dlspf/wae.hpp"

namespace dlspf::filter {

// Noise stream tags shared by the high-fidelity and latent filters so the
// identity-surrogate reduction consumes randomness identically.
inline constexpr std::uint64_t kStateNoiseTag = 0x5A17;
inline constexpr std::uint64_t kParamJitterTag = 0x5A18;
inline constexpr std::uint64_t kResampleTag = 0x5A19;

// Particle payload: `x` is the full state in HF mode and the flattened
// latent history window ((k+1) x latent) in latent mode; `m` holds static
// parameters (possibly empty).
struct Particle {
    std::vector<double> x;
    std::vector<double> m;
};

struct FilterConfig {
    std::size_t n_particles = 100;
    double ess_threshold = 0.0;  // <= 0 means N/2
    std::uint64_t seed = 0;
    std::size_t workers = 1;

    double lambda_ess(std::size_t n) const {
        const double lambda =
            ess_threshold > 0.0 ? ess_threshold : static_cast<double>(n) / 2.0;
        return std::max(1.0, lambda);  // N = 1 would otherwise fall below the floor
    }
};

// w_i proportional to prev_i * exp(ll_i), normalized via log-sum-exp.
// Throws DegenerateEnsembleError when every weight underflows to zero.
std::vector<double> update_weights(const std::vector<double>& prev_weights,
                                   const std::vector<double>& log_likelihoods);

// 1 / sum(w^2); requires normalized weights.
double effective_sample_size(const std::vector<double>& weights);

// N i.i.d. categorical draws (sorted by draw index, not value).
std::vector<std::size_t> multinomial_resample(const std::vector<double>& weights,
                                              std::size_t n_draws, RngStream& rng);

struct PhaseTimings {
    double step_s = 0.0;
    double decode_s = 0.0;
    double weight_s = 0.0;
    double resample_s = 0.0;
    double total_s = 0.0;
};

struct FilterResult {
    std::size_t n_particles = 0;
    std::size_t state_dim = 0;
    std::size_t param_dim = 0;
    std::vector<std::size_t> obs_model_steps;        // model step of each observation
    std::vector<double> ess;                         // pre-resample, per observation
    std::vector<char> resampled;                     // per observation
    std::vector<std::vector<double>> ensembles;      // [n_obs][N*state_dim], physical space
    std::vector<std::vector<double>> param_ensembles;  // [n_obs][N*param_dim]
    std::vector<std::vector<double>> weights_history;  // [n_obs][N]
    std::vector<std::vector<double>> mean;           // weighted, [n_obs][state_dim]
    std::vector<std::vector<double>> std_dev;        // weighted, [n_obs][state_dim]
    std::vector<std::vector<double>> param_mean;     // [n_obs][param_dim]
    PhaseTimings timings;
};

struct BootstrapHooks {
    // Advance every particle one model step (model noise included).
    std::function<void(std::vector<Particle>&, std::size_t model_step)> propagate;
    // Physical-space view of the particles (decode + denormalize in latent
    // mode, plain copy in HF mode).
    std::function<std::vector<std::vector<double>>(const std::vector<Particle>&)> realize;
    const da::ObservationOperator* observation = nullptr;
    double obs_noise_std = 0.1;
};

// Shared bootstrap loop: per observation, `steps_per_obs` propagation
// steps, then weight update and conditional multinomial resampling.
FilterResult run_bootstrap_filter(const BootstrapHooks& hooks, std::vector<Particle> ensemble,
                                  const std::vector<std::vector<double>>& observations,
                                  std::size_t steps_per_obs, const FilterConfig& cfg);

// High-fidelity bootstrap filter. `advance` applies the deterministic
// forward model in place; process noise is added per model step, parameter
// jitter once per observation interval.
using AdvanceFn =
    std::function<void(std::vector<double>& q, const std::vector<double>& m, std::size_t step)>;

FilterResult hf_filter(std::vector<da::AugmentedState> initial, const AdvanceFn& advance,
                       const da::GaussianNoise& process_noise,
                       const da::GaussianNoise& param_jitter,
                       const std::vector<std::vector<double>>& observations,
                       const da::ObservationOperator& h, double obs_noise_std,
                       std::size_t steps_per_obs, const FilterConfig& cfg);

// Trained surrogate package consumed by the latent filter.
struct ModelBundle {
    surrogate::Autoencoder ae;
    surrogate::LatentStepper stepper;
    surrogate::NormStats stats;
    std::string config_hash;

    void validate() const;  // latent dims must agree across components
};

struct DlspfOptions {
    double latent_noise_std = 0.01;  // std of the latent model error
    double param_jitter_std = 0.0;   // per observation interval
    std::size_t steps_per_obs = 1;   // latent model steps per observation
};

struct DlspfResult {
    FilterResult filter;
    // Assimilated latent ensemble per observation step, [n_obs][N*latent].
    std::vector<std::vector<double>> latent_ensembles;
};

// Algorithm: encode the initial conditions, then loop { latent step with
// injected model error, decode, weight, normalize, resample on low ESS }.
DlspfResult run_dlspf(const std::vector<da::AugmentedState>& initial_states,
                      const std::vector<std::vector<double>>& observations,
                      const ModelBundle& bundle, const da::ObservationOperator& h,
                      double obs_noise_std, const DlspfOptions& opts, const FilterConfig& cfg);

// ---- analysis diagnostics ----

struct ImportanceRatioDiagnostic {
    double ratio = 0.0;        // sup over samples / Monte Carlo mean
    double numerator = 0.0;
    double denominator = 0.0;
    std::size_t n_samples = 0;
};

ImportanceRatioDiagnostic estimate_importance_ratio(
    const std::function<double(const std::vector<double>&)>& likelihood,
    const std::function<std::vector<double>(RngStream&)>& prior_sampler, std::size_t n_samples,
    std::uint64_t seed);

struct ConvergenceFit {
    double slope = 0.0;
    std::vector<std::size_t> particle_counts;
    std::vector<double> rmse;  // per particle count, averaged over seeds
};

// Fits the log-log slope of RMSE against ensemble size.
ConvergenceFit mc_convergence_test(
    const std::function<double(std::size_t n_particles, std::uint64_t seed)>& estimator_error,
    const std::vector<std::size_t>& particle_counts, const std::vector<std::uint64_t>& seeds);

}  // namespace dlspf::filter
