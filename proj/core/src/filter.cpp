#include "dlspf/filter.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "dlspf/errors.hpp"
#include "dlspf/parallel.hpp"

namespace dlspf::filter {

namespace {

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void check_normalized(const std::vector<double>& weights, const char* who) {
    double sum = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw DegenerateEnsembleError(std::string(who) + ": negative weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw DegenerateEnsembleError(std::string(who) + ": weights not normalized (sum " +
                                      std::to_string(sum) + ")");
}

}  // namespace

std::vector<double> update_weights(const std::vector<double>& prev_weights,
                                   const std::vector<double>& log_likelihoods) {
    if (prev_weights.size() != log_likelihoods.size())
        throw ShapeError("update_weights: length mismatch");
    const std::size_t n = prev_weights.size();
    if (n == 0) throw ShapeError("update_weights: empty ensemble");
    // log w_i = log prev_i + ll_i, normalized by log-sum-exp
    std::vector<double> logw(n);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        logw[i] = (prev_weights[i] > 0.0 ? std::log(prev_weights[i]) : -std::numeric_limits<double>::infinity()) +
                  log_likelihoods[i];
        mx = std::max(mx, logw[i]);
    }
    if (!std::isfinite(mx))
        throw DegenerateEnsembleError("update_weights: all weights vanished");
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::exp(logw[i] - mx);
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(logw[i] - mx) / sum;
    return out;
}

double effective_sample_size(const std::vector<double>& weights) {
    check_normalized(weights, "effective_sample_size");
    double sq = 0.0;
    for (double w : weights) sq += w * w;
    if (sq <= 0.0) throw DegenerateEnsembleError("effective_sample_size: zero weights");
    return 1.0 / sq;
}

std::vector<std::size_t> multinomial_resample(const std::vector<double>& weights,
                                              std::size_t n_draws, RngStream& rng) {
    check_normalized(weights, "multinomial_resample");
    const std::size_t n = weights.size();
    std::vector<double> cdf(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += weights[i];
        cdf[i] = acc;
    }
    cdf[n - 1] = 1.0;
    std::vector<std::size_t> idx(n_draws);
    for (std::size_t d = 0; d < n_draws; ++d) {
        const double u = rng.uniform();
        idx[d] = static_cast<std::size_t>(
            std::lower_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
    }
    return idx;
}

FilterResult run_bootstrap_filter(const BootstrapHooks& hooks, std::vector<Particle> ensemble,
                                  const std::vector<std::vector<double>>& observations,
                                  std::size_t steps_per_obs, const FilterConfig& cfg) {
    if (ensemble.empty()) throw DegenerateEnsembleError("filter: empty ensemble");
    if (steps_per_obs == 0) throw ConfigError("filter: steps_per_obs must be >= 1");
    if (hooks.observation == nullptr) throw ConfigError("filter: missing observation operator");
    const std::size_t n = ensemble.size();
    const double lambda = cfg.lambda_ess(n);
    if (lambda < 1.0 || lambda > static_cast<double>(n))
        throw ConfigError("filter: ess threshold must lie in [1, N]");

    FilterResult res;
    res.n_particles = n;
    res.param_dim = ensemble.front().m.size();
    std::vector<double> weights(n, 1.0 / static_cast<double>(n));

    const auto t_run0 = std::chrono::steady_clock::now();
    std::size_t model_step = 0;
    for (std::size_t obs_i = 0; obs_i < observations.size(); ++obs_i) {
        const auto& y = observations[obs_i];

        auto t0 = std::chrono::steady_clock::now();
        for (std::size_t sub = 0; sub < steps_per_obs; ++sub) {
            hooks.propagate(ensemble, model_step);
            ++model_step;
        }
        res.timings.step_s += seconds_since(t0);

        t0 = std::chrono::steady_clock::now();
        const auto realized = hooks.realize(ensemble);
        res.timings.decode_s += seconds_since(t0);
        if (obs_i == 0) res.state_dim = realized.front().size();

        t0 = std::chrono::steady_clock::now();
        std::vector<double> loglik(n);
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> residual = hooks.observation->observe(realized[i]);
            if (residual.size() != y.size())
                throw ShapeError("filter: observation dimension mismatch");
            for (std::size_t j = 0; j < y.size(); ++j) residual[j] = y[j] - residual[j];
            loglik[i] = da::gaussian_log_likelihood(residual, hooks.obs_noise_std);
        }
        weights = update_weights(weights, loglik);
        const double ess = effective_sample_size(weights);
        res.timings.weight_s += seconds_since(t0);

        // record the weighted posterior representation at this step
        res.obs_model_steps.push_back(model_step);
        res.ess.push_back(ess);
        res.weights_history.push_back(weights);
        std::vector<double> flat(n * res.state_dim);
        for (std::size_t i = 0; i < n; ++i)
            std::copy(realized[i].begin(), realized[i].end(), flat.begin() + i * res.state_dim);
        std::vector<double> mean(res.state_dim, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < res.state_dim; ++j)
                mean[j] += weights[i] * realized[i][j];
        std::vector<double> sd(res.state_dim, 0.0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < res.state_dim; ++j) {
                const double d = realized[i][j] - mean[j];
                sd[j] += weights[i] * d * d;
            }
        for (double& v : sd) v = std::sqrt(v);
        res.ensembles.push_back(std::move(flat));
        res.mean.push_back(std::move(mean));
        res.std_dev.push_back(std::move(sd));
        if (res.param_dim > 0) {
            std::vector<double> pflat(n * res.param_dim);
            std::vector<double> pmean(res.param_dim, 0.0);
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < res.param_dim; ++j) {
                    pflat[i * res.param_dim + j] = ensemble[i].m[j];
                    pmean[j] += weights[i] * ensemble[i].m[j];
                }
            res.param_ensembles.push_back(std::move(pflat));
            res.param_mean.push_back(std::move(pmean));
        }

        t0 = std::chrono::steady_clock::now();
        if (ess < lambda && n > 1) {
            RngStream rng(cfg.seed, substream_id(kResampleTag, model_step, 0));
            const auto idx = multinomial_resample(weights, n, rng);
            std::vector<Particle> next(n);
            for (std::size_t i = 0; i < n; ++i) next[i] = ensemble[idx[i]];
            ensemble = std::move(next);
            std::fill(weights.begin(), weights.end(), 1.0 / static_cast<double>(n));
            res.resampled.push_back(1);
        } else {
            res.resampled.push_back(0);
        }
        res.timings.resample_s += seconds_since(t0);
    }
    res.timings.total_s = seconds_since(t_run0);
    return res;
}

FilterResult hf_filter(std::vector<da::AugmentedState> initial, const AdvanceFn& advance,
                       const da::GaussianNoise& process_noise,
                       const da::GaussianNoise& param_jitter,
                       const std::vector<std::vector<double>>& observations,
                       const da::ObservationOperator& h, double obs_noise_std,
                       std::size_t steps_per_obs, const FilterConfig& cfg) {
    process_noise.validate();
    param_jitter.validate();
    std::vector<Particle> ensemble(initial.size());
    for (std::size_t i = 0; i < initial.size(); ++i)
        ensemble[i] = Particle{std::move(initial[i].q), std::move(initial[i].m)};

    BootstrapHooks hooks;
    hooks.observation = &h;
    hooks.obs_noise_std = obs_noise_std;
    hooks.propagate = [&advance, &process_noise, &param_jitter, steps_per_obs,
                       seed = cfg.seed, workers = cfg.workers](std::vector<Particle>& parts,
                                                               std::size_t model_step) {
        const bool interval_start = (model_step % steps_per_obs) == 0;
        const std::size_t interval = model_step / steps_per_obs;
        parallel_for_chunks(parts.size(), workers, [&](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) {
                if (interval_start && !param_jitter.empty() && !parts[i].m.empty()) {
                    RngStream zeta(seed, substream_id(kParamJitterTag, interval, i));
                    param_jitter.add_to(parts[i].m, zeta);
                }
                advance(parts[i].x, parts[i].m, model_step);
                if (!process_noise.empty()) {
                    RngStream xi(seed, substream_id(kStateNoiseTag, model_step, i));
                    process_noise.add_to(parts[i].x, xi);
                }
            }
        });
    };
    hooks.realize = [](const std::vector<Particle>& parts) {
        std::vector<std::vector<double>> out(parts.size());
        for (std::size_t i = 0; i < parts.size(); ++i) out[i] = parts[i].x;
        return out;
    };
    return run_bootstrap_filter(hooks, std::move(ensemble), observations, steps_per_obs, cfg);
}

void ModelBundle::validate() const {
    if (ae.cfg.latent_dim != stepper.cfg.latent_dim)
        throw ConfigError("model bundle: autoencoder latent dim " +
                          std::to_string(ae.cfg.latent_dim) + " != stepper latent dim " +
                          std::to_string(stepper.cfg.latent_dim));
    if (ae.cfg.param_dim != stepper.cfg.param_dim)
        throw ConfigError("model bundle: param dim mismatch between decoder and stepper");
    if (ae.cfg.param_dim != stats.m_min.size())
        throw ConfigError("model bundle: param dim mismatch with norm stats");
    stats.validate();
}

DlspfResult run_dlspf(const std::vector<da::AugmentedState>& initial_states,
                      const std::vector<std::vector<double>>& observations,
                      const ModelBundle& bundle, const da::ObservationOperator& h,
                      double obs_noise_std, const DlspfOptions& opts, const FilterConfig& cfg) {
    bundle.validate();
    const auto& ae = bundle.ae;
    const auto& stepper = bundle.stepper;
    const std::size_t n = initial_states.size();
    if (n == 0) throw DegenerateEnsembleError("run_dlspf: empty initial ensemble");
    const std::size_t ld = ae.cfg.latent_dim;
    const std::size_t pd = ae.cfg.param_dim;
    const std::size_t w = stepper.cfg.window();
    const std::size_t dim = ae.cfg.state_channels * ae.cfg.state_length;

    // Encode the N initial conditions (batched) and seed each particle's
    // history window by repeating its initial latent state.
    ad::Tensor q0({n, ae.cfg.state_channels, ae.cfg.state_length}, ae.cfg.dtype, false);
    for (std::size_t i = 0; i < n; ++i) {
        if (initial_states[i].q.size() != dim)
            throw ShapeError("run_dlspf: initial state dim mismatch");
        std::copy(initial_states[i].q.begin(), initial_states[i].q.end(),
                  q0.value().begin() + i * dim);
    }
    ad::Tensor z0 = ae.encode(surrogate::minmax_normalize(q0, bundle.stats));
    std::vector<Particle> ensemble(n);
    for (std::size_t i = 0; i < n; ++i) {
        ensemble[i].x.resize(w * ld);
        for (std::size_t rep = 0; rep < w; ++rep)
            std::copy(z0.value().begin() + i * ld, z0.value().begin() + (i + 1) * ld,
                      ensemble[i].x.begin() + rep * ld);
        ensemble[i].m = initial_states[i].m;
        if (ensemble[i].m.size() != pd)
            throw ShapeError("run_dlspf: particle parameter dim mismatch");
    }

    const da::GaussianNoise latent_noise = da::GaussianNoise::iid(opts.latent_noise_std, ld);
    const da::GaussianNoise param_jitter =
        pd > 0 && opts.param_jitter_std > 0.0 ? da::GaussianNoise::iid(opts.param_jitter_std, pd)
                                              : da::GaussianNoise{};

    BootstrapHooks hooks;
    hooks.observation = &h;
    hooks.obs_noise_std = obs_noise_std;
    hooks.propagate = [&stepper, &bundle, &latent_noise, &param_jitter, w, ld, pd,
                       steps_per_obs = opts.steps_per_obs, seed = cfg.seed,
                       workers = cfg.workers](std::vector<Particle>& parts,
                                              std::size_t model_step) {
        const bool interval_start = (model_step % steps_per_obs) == 0;
        const std::size_t interval = model_step / steps_per_obs;
        parallel_for_chunks(parts.size(), workers, [&](std::size_t lo, std::size_t hi) {
            const std::size_t bs = hi - lo;
            ad::Tensor hist({bs, w, ld}, stepper.cfg.dtype, false);
            ad::Tensor m;
            for (std::size_t i = lo; i < hi; ++i) {
                if (interval_start && !param_jitter.empty()) {
                    RngStream zeta(seed, substream_id(kParamJitterTag, interval, i));
                    param_jitter.add_to(parts[i].m, zeta);
                }
                std::copy(parts[i].x.begin(), parts[i].x.end(),
                          hist.value().begin() + (i - lo) * w * ld);
            }
            if (pd > 0) {
                m = ad::Tensor({bs, pd}, stepper.cfg.dtype, false);
                for (std::size_t i = lo; i < hi; ++i) {
                    std::vector<double> mn = parts[i].m;
                    surrogate::normalize_params_flat(mn, bundle.stats);
                    std::copy(mn.begin(), mn.end(), m.value().begin() + (i - lo) * pd);
                }
            }
            ad::Tensor next = stepper.step(hist, m);  // [bs, ld]
            for (std::size_t i = lo; i < hi; ++i) {
                std::vector<double> z(next.value().begin() + (i - lo) * ld,
                                      next.value().begin() + (i - lo + 1) * ld);
                RngStream xi(seed, substream_id(kStateNoiseTag, model_step, i));
                latent_noise.add_to(z, xi);
                // slide the window
                std::copy(parts[i].x.begin() + ld, parts[i].x.end(), parts[i].x.begin());
                std::copy(z.begin(), z.end(), parts[i].x.end() - ld);
            }
        });
    };
    hooks.realize = [&ae, &bundle, w, ld, pd, workers = cfg.workers](
                        const std::vector<Particle>& parts) {
        std::vector<std::vector<double>> out(parts.size());
        parallel_for_chunks(parts.size(), workers, [&](std::size_t lo, std::size_t hi) {
            const std::size_t bs = hi - lo;
            std::vector<double> z_flat(bs * ld);
            std::vector<double> m_flat(pd > 0 ? bs * pd : 0);
            for (std::size_t i = lo; i < hi; ++i) {
                std::copy(parts[i].x.end() - ld, parts[i].x.end(),
                          z_flat.begin() + (i - lo) * ld);
                if (pd > 0) {
                    std::vector<double> mn = parts[i].m;
                    surrogate::normalize_params_flat(mn, bundle.stats);
                    std::copy(mn.begin(), mn.end(), m_flat.begin() + (i - lo) * pd);
                }
            }
            auto decoded = surrogate::decode_denormalize_batch(ae, bundle.stats, z_flat, m_flat, bs);
            for (std::size_t i = lo; i < hi; ++i) out[i] = std::move(decoded[i - lo]);
        });
        return out;
    };

    DlspfResult result;
    // wrap realize to snapshot the latent ensemble at observation times
    BootstrapHooks wrapped = hooks;
    wrapped.realize = [&hooks, &result, ld](const std::vector<Particle>& parts) {
        std::vector<double> latents(parts.size() * ld);
        for (std::size_t i = 0; i < parts.size(); ++i)
            std::copy(parts[i].x.end() - ld, parts[i].x.end(), latents.begin() + i * ld);
        result.latent_ensembles.push_back(std::move(latents));
        return hooks.realize(parts);
    };
    result.filter = run_bootstrap_filter(wrapped, std::move(ensemble), observations,
                                         opts.steps_per_obs, cfg);
    return result;
}

ImportanceRatioDiagnostic estimate_importance_ratio(
    const std::function<double(const std::vector<double>&)>& likelihood,
    const std::function<std::vector<double>(RngStream&)>& prior_sampler, std::size_t n_samples,
    std::uint64_t seed) {
    if (n_samples < 100)
        throw ConfigError("estimate_importance_ratio: need at least 100 samples");
    RngStream rng(seed, substream_id(0x1F5A, 0, 0));
    double sup = -std::numeric_limits<double>::infinity();
    double sum = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        const std::vector<double> u = prior_sampler(rng);
        const double hval = likelihood(u);
        sup = std::max(sup, hval);
        sum += hval;
    }
    const double mean = sum / static_cast<double>(n_samples);
    if (mean <= 0.0)
        throw DegenerateEnsembleError("estimate_importance_ratio: zero denominator");
    return {sup / mean, sup, mean, n_samples};
}

ConvergenceFit mc_convergence_test(
    const std::function<double(std::size_t n_particles, std::uint64_t seed)>& estimator_error,
    const std::vector<std::size_t>& particle_counts, const std::vector<std::uint64_t>& seeds) {
    if (particle_counts.size() < 2) throw ConfigError("mc_convergence_test: need >= 2 counts");
    if (seeds.empty()) throw ConfigError("mc_convergence_test: need >= 1 seed");
    ConvergenceFit fit;
    fit.particle_counts = particle_counts;
    for (std::size_t np : particle_counts) {
        double acc = 0.0;
        for (std::uint64_t s : seeds) {
            const double e = estimator_error(np, s);
            acc += e * e;
        }
        fit.rmse.push_back(std::sqrt(acc / static_cast<double>(seeds.size())));
    }
    // least-squares slope of log(rmse) against log(N)
    const std::size_t k = particle_counts.size();
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        const double x = std::log(static_cast<double>(particle_counts[i]));
        const double y = std::log(fit.rmse[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    const double denom = static_cast<double>(k) * sxx - sx * sx;
    fit.slope = (static_cast<double>(k) * sxy - sx * sy) / denom;
    return fit;
}

}  // namespace dlspf::filter
