#include "dlspf/stepper.hpp"

#include <algorithm>
#include <cmath>

#include "dlspf/errors.hpp"

namespace dlspf::surrogate {

using namespace dlspf::ad;

void StepperConfig::validate() const {
    if (latent_dim == 0 || embed_dim == 0)
        throw ConfigError("stepper: extents must be positive");
    if (memory < 1) throw ConfigError("stepper: memory k must be >= 1");
    if (unroll < 1) throw ConfigError("stepper: unroll s must be >= 1");
    if (num_blocks == 0 && param_dim != 0)
        throw ConfigError("stepper: identity stepper cannot take parameters");
    if (num_blocks > 0 && embed_dim % num_heads != 0)
        throw ConfigError("stepper: embed_dim not divisible by num_heads");
}

LatentStepper LatentStepper::init(const StepperConfig& cfg, std::uint64_t seed,
                                  std::uint64_t stream_tag) {
    cfg.validate();
    LatentStepper m;
    m.cfg = cfg;
    if (cfg.num_blocks == 0) return m;  // identity stepper
    RngStream rng(seed, substream_id(stream_tag, 0xD71, 0));
    if (cfg.param_dim > 0) {
        m.param_w = Tensor::xavier(cfg.param_dim, cfg.embed_dim, rng, cfg.dtype);
        m.param_b = Tensor::zeros({cfg.embed_dim}, cfg.dtype, true);
    }
    m.lift_w = Tensor::xavier(cfg.latent_dim, cfg.embed_dim, rng, cfg.dtype);
    m.lift_b = Tensor::zeros({cfg.embed_dim}, cfg.dtype, true);
    m.pos = nn::positional_encoding(cfg.seq_len(), cfg.embed_dim, cfg.dtype);
    nn::AttentionConfig acfg;
    acfg.embed_dim = cfg.embed_dim;
    acfg.num_heads = cfg.num_heads;
    acfg.context_length = cfg.seq_len();
    const std::size_t hidden = cfg.ffn_hidden ? cfg.ffn_hidden : 2 * cfg.embed_dim;
    for (std::size_t i = 0; i < cfg.num_blocks; ++i)
        m.blocks.push_back(nn::EncoderBlock::init(acfg, hidden, rng, cfg.act, cfg.dtype));
    m.head_w = Tensor::xavier(cfg.embed_dim, cfg.latent_dim, rng, cfg.dtype);
    m.head_b = Tensor::zeros({cfg.latent_dim}, cfg.dtype, true);
    return m;
}

Tensor LatentStepper::param_encode(const Tensor& m) const {
    if (cfg.param_dim == 0) throw ConfigError("param_encode: model has no parameter encoder");
    if (m.shape().back() != cfg.param_dim)
        throw ShapeError("param_encode: expected param_dim " + std::to_string(cfg.param_dim));
    const bool batched = m.rank() == 2;
    Tensor min = batched ? m : reshape(m, {1, cfg.param_dim});
    Tensor token = dense(min, param_w, param_b, cfg.act);
    return batched ? token : reshape(token, {cfg.embed_dim});
}

Tensor LatentStepper::step(const Tensor& history, const Tensor& m) const {
    const bool batched = history.rank() == 3;
    if (history.rank() != 2 && history.rank() != 3)
        throw ShapeError("step: history must be [k+1, latent] or [B, k+1, latent]");
    Tensor h = batched ? history
                       : reshape(history, {1, history.extent(0), history.extent(1)});
    if (h.extent(1) != cfg.window() || h.extent(2) != cfg.latent_dim)
        throw ShapeError("step: history must hold exactly k+1 = " +
                         std::to_string(cfg.window()) + " latent states");
    const std::size_t b = h.extent(0);
    if (cfg.num_blocks == 0) {
        // identity stepper: the next state is the newest history entry
        Tensor last = reshape(slice(h, 1, cfg.window() - 1, cfg.window()), {b, cfg.latent_dim});
        return batched ? last : reshape(last, {cfg.latent_dim});
    }
    Tensor seq = dense(h, lift_w, lift_b, Activation::identity);  // [B, k+1, e]
    if (cfg.param_dim > 0) {
        if (!m.defined()) throw ConfigError("step: parameterized model requires parameters");
        Tensor mm = (m.rank() == 2) ? m : reshape(m, {1, m.extent(0)});
        Tensor token = reshape(param_encode(mm), {b, 1, cfg.embed_dim});
        seq = concat({token, seq}, 1);
    } else if (m.defined()) {
        throw ConfigError("step: model has no parameter input");
    }
    seq = add(seq, pos);
    for (const auto& block : blocks) seq = block.forward(seq, /*causal=*/true);
    Tensor last = reshape(slice(seq, 1, cfg.seq_len() - 1, cfg.seq_len()), {b, cfg.embed_dim});
    Tensor out = dense(last, head_w, head_b, Activation::identity);
    return batched ? out : reshape(out, {cfg.latent_dim});
}

std::vector<double> LatentStepper::pad_history(const std::vector<std::vector<double>>& states,
                                               std::size_t window, std::size_t latent_dim) {
    if (states.empty()) throw ShapeError("pad_history: need at least one state");
    std::vector<double> flat(window * latent_dim);
    const std::size_t have = states.size();
    for (std::size_t i = 0; i < window; ++i) {
        const std::size_t src = have >= window ? have - window + i
                                               : (i < window - have ? 0 : i - (window - have));
        if (states[src].size() != latent_dim) throw ShapeError("pad_history: latent dim mismatch");
        std::copy(states[src].begin(), states[src].end(), flat.begin() + i * latent_dim);
    }
    return flat;
}

std::vector<std::vector<double>> LatentStepper::rollout(
    const std::vector<std::vector<double>>& initial, const std::vector<double>& m,
    std::size_t steps) const {
    if (steps < 1) throw ConfigError("rollout: steps must be >= 1");
    std::vector<std::vector<double>> traj = initial;
    Tensor mt = m.empty() ? Tensor() : Tensor::from_data({m.size()}, m, cfg.dtype);
    const std::size_t w = cfg.window();
    for (std::size_t s = 0; s < steps; ++s) {
        Tensor hist = Tensor::from_data({w, cfg.latent_dim}, pad_history(traj, w, cfg.latent_dim),
                                        cfg.dtype);
        Tensor next = step(hist, mt);
        traj.push_back(next.value());
    }
    return traj;
}

nn::NamedParams LatentStepper::named_params() {
    nn::NamedParams out;
    if (cfg.num_blocks == 0) return out;  // identity stepper has no parameters
    if (cfg.param_dim > 0) {
        out.emplace_back("dyn.param.w", param_w);
        out.emplace_back("dyn.param.b", param_b);
    }
    out.emplace_back("dyn.lift.w", lift_w);
    out.emplace_back("dyn.lift.b", lift_b);
    for (std::size_t i = 0; i < blocks.size(); ++i)
        blocks[i].named_params("dyn.block" + std::to_string(i), out);
    out.emplace_back("dyn.head.w", head_w);
    out.emplace_back("dyn.head.b", head_b);
    return out;
}

std::vector<Tensor> LatentStepper::params() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_params()) out.push_back(t);
    return out;
}

io::Checkpoint LatentStepper::to_checkpoint(const std::string& config_hash) const {
    io::Checkpoint ckpt;
    ckpt.model_kind = "latent_stepper";
    ckpt.config_hash = config_hash;
    for (auto& [name, t] : const_cast<LatentStepper&>(*this).named_params())
        ckpt.add(name, t.detached_copy());
    return ckpt;
}

LatentStepper LatentStepper::from_checkpoint(const StepperConfig& cfg,
                                             const io::Checkpoint& ckpt) {
    LatentStepper m = LatentStepper::init(cfg, 0);
    for (auto& [name, t] : m.named_params()) {
        const Tensor& loaded = ckpt.find(name);
        if (loaded.shape() != t.shape())
            throw IoError("checkpoint tensor '" + name + "' has shape " +
                          shape_str(loaded.shape()) + ", expected " + shape_str(t.shape()));
        t.value() = loaded.value();
    }
    return m;
}

Tensor unrolled_loss(const LatentStepper& model, const Tensor& history,
                     const std::vector<Tensor>& targets, const Tensor& m) {
    if (targets.empty()) throw ShapeError("unrolled_loss: need at least one target");
    const std::size_t w = model.cfg.window();
    const std::size_t ld = model.cfg.latent_dim;
    const std::size_t bs = history.rank() == 3 ? history.extent(0) : 1;
    Tensor window_t = history.rank() == 3 ? history : reshape(history, {1, w, ld});
    Tensor loss;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        Tensor pred = model.step(window_t, m);  // [bs, ld]
        Tensor target = targets[i].rank() == 2 ? targets[i] : reshape(targets[i], {1, ld});
        Tensor term = mse(pred, target);
        loss = loss.defined() ? add(loss, term) : term;
        if (i + 1 < targets.size()) {
            Tensor shifted = slice(window_t, 1, 1, w);
            window_t = concat({shifted, reshape(pred, {bs, 1, ld})}, 1);
        }
    }
    return loss;
}

std::vector<StepperHistoryRow> train_stepper(LatentStepper& model, const Tensor& latents,
                                             const Tensor& params,
                                             const StepperTrainConfig& cfg) {
    if (latents.rank() != 3) throw ShapeError("train_stepper: expects [n_traj, T, latent]");
    const StepperConfig& mc = model.cfg;
    const std::size_t n_traj = latents.extent(0);
    const std::size_t t_len = latents.extent(1);
    const std::size_t ld = latents.extent(2);
    if (ld != mc.latent_dim) throw ConfigError("train_stepper: latent dim mismatch");
    if (mc.param_dim > 0 &&
        (!params.defined() || params.rank() != 2 || params.extent(1) != mc.param_dim))
        throw ConfigError("train_stepper: parameterized model needs [n_traj, param_dim] params");
    const std::size_t w = mc.window();
    if (t_len < w + mc.unroll)
        throw ConfigError("train_stepper: trajectories shorter than window + unroll");
    const std::size_t starts_per_traj = t_len - w - mc.unroll + 1;
    const std::size_t total_windows = n_traj * starts_per_traj;

    auto tensors = model.params();
    AdamState opt;
    const std::size_t bs = std::max<std::size_t>(cfg.batch_size, 1);
    const std::size_t windows = std::min(cfg.windows_per_epoch, total_windows);
    const std::size_t batches_per_epoch = std::max<std::size_t>(windows / bs, 1);
    LrSchedule lr = cfg.lr;
    if (lr.total_steps <= 1) lr.total_steps = cfg.epochs * batches_per_epoch;

    std::vector<StepperHistoryRow> history;
    std::size_t step_idx = 0;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngStream pick_rng(cfg.seed, substream_id(cfg.stream_tag, 0x77, epoch));
        double epoch_loss = 0.0;
        double epoch_reg = 0.0;
        for (std::size_t b = 0; b < batches_per_epoch; ++b) {
            Tensor hist({bs, w, ld}, mc.dtype, false);
            Tensor batch_m =
                mc.param_dim > 0 ? Tensor({bs, mc.param_dim}, mc.dtype, false) : Tensor();
            std::vector<Tensor> targets;  // unroll x [bs, ld]
            for (std::size_t i = 0; i < mc.unroll; ++i)
                targets.emplace_back(Shape{bs, ld}, mc.dtype, false);
            for (std::size_t j = 0; j < bs; ++j) {
                const std::size_t pick = pick_rng.next_below(total_windows);
                const std::size_t traj = pick / starts_per_traj;
                const std::size_t start = pick % starts_per_traj;
                const double* base = latents.value().data() + (traj * t_len + start) * ld;
                std::copy_n(base, w * ld, hist.value().data() + j * w * ld);
                for (std::size_t i = 0; i < mc.unroll; ++i)
                    std::copy_n(base + (w + i) * ld, ld,
                                targets[i].value().data() + j * ld);
                if (batch_m.defined())
                    std::copy_n(params.value().data() + traj * mc.param_dim, mc.param_dim,
                                batch_m.value().data() + j * mc.param_dim);
            }

            double loss_val = 0.0;
            double reg_val = 0.0;
            {
                GradientTape tape;
                Tensor loss = unrolled_loss(model, hist, targets, batch_m);
                if (cfg.alpha > 0.0) {
                    Tensor reg;
                    for (auto& p : tensors) {
                        Tensor s = sum_sq(p);
                        reg = reg.defined() ? add(reg, s) : s;
                    }
                    reg_val = reg.item();
                    loss = add(loss, mul_scalar(reg, cfg.alpha));
                }
                loss_val = loss.item();
                if (!std::isfinite(loss_val))
                    throw TrainingDivergenceError("stepper loss became non-finite at step " +
                                                  std::to_string(step_idx));
                tape.backward(loss);
            }
            if (cfg.clip_norm > 0.0) clip_grad_norm(tensors, cfg.clip_norm);
            opt.lr = lr_at(lr, step_idx);
            adam_step(tensors, opt);
            for (auto& p : tensors) p.zero_grad();
            ++step_idx;
            epoch_loss += loss_val;
            epoch_reg += reg_val;
        }
        const double inv = 1.0 / static_cast<double>(batches_per_epoch);
        history.push_back({epoch, epoch_loss * inv, epoch_reg * inv});
    }
    return history;
}

}  // namespace dlspf::surrogate
