#include "dlspf/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "dlspf/errors.hpp"
#include "dlspf/io.hpp"

namespace dlspf::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::uint64_t kTrainTag = 1;
constexpr std::uint64_t kTestTag = 2;
constexpr std::uint64_t kTruthTag = 0xBEEF;
constexpr std::uint64_t kObsNoiseTag = 0xF00D;
constexpr std::uint64_t kInitTag = 0x1417;

double now_s() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::string join(const std::string& dir, const std::string& file) {
    return (fs::path(dir) / file).string();
}

void write_manifest(const std::string& out_dir, const json& manifest) {
    io::atomic_write_file(join(out_dir, "manifest.json"), manifest.dump(2) + "\n");
}

json load_manifest(const std::string& run_dir) {
    std::istringstream in(io::read_file_bytes(join(run_dir, "manifest.json")));
    json j;
    in >> j;
    return j;
}

// Hash of the deterministic payload: canonical JSON plus the bytes of the
// referenced output files, in name order.
std::string result_hash(const json& deterministic, const std::string& out_dir,
                        const std::vector<std::string>& files) {
    std::string blob = deterministic.dump();
    for (const auto& f : files) {
        blob += '\0' + f + '\0';
        blob += io::read_file_bytes(join(out_dir, f));
    }
    return sha256_hex(blob);
}

LrSchedule lr_from_json(const json& j, std::size_t fallback_total) {
    LrSchedule lr;
    lr.base_lr = j.value("base", 1e-3);
    lr.warmup_steps = j.value("warmup", 100);
    lr.min_lr = j.value("min", 1e-5);
    lr.total_steps = j.value("total", fallback_total);
    return lr;
}

ExperimentConfig apply_overrides(ExperimentConfig cfg, const RunContext& ctx) {
    if (ctx.has_seed_override) cfg.root()["seed"] = ctx.seed_override;
    if (ctx.particles_override > 0) cfg.root()["filter"]["n_particles"] = ctx.particles_override;
    return cfg;
}

std::string require_path(const ExperimentConfig& cfg, const std::string& key) {
    const std::string p = cfg.get<std::string>(key, "");
    if (p.empty()) throw ConfigError("config is missing required path '" + key + "'");
    return p;
}

}  // namespace

// ---------------------------------------------------------------- configs

surrogate::AeConfig ae_config_from_json(const json& j) {
    surrogate::AeConfig cfg;
    cfg.state_channels = j.value("state_channels", 1);
    cfg.state_length = j.at("state_length").get<std::size_t>();
    cfg.latent_dim = j.value("latent_dim", 16);
    cfg.param_dim = j.value("param_dim", 0);
    cfg.act = ad::activation_from_string(j.value("activation", "gelu"));
    auto parse_layers = [](const json& arr) {
        std::vector<surrogate::PatchSpec> layers;
        for (const auto& l : arr) {
            surrogate::PatchSpec s;
            s.num_patches = l.at("patches").get<std::size_t>();
            s.in_channels = l.at("in_channels").get<std::size_t>();
            s.in_length = l.at("in_length").get<std::size_t>();
            s.embed_dim = l.value("embed_dim", 32);
            s.num_heads = l.value("heads", 2);
            s.ffn_hidden = l.value("ffn_hidden", 0);
            s.out_channels = l.at("out_channels").get<std::size_t>();
            s.out_patch_len = l.at("out_patch_len").get<std::size_t>();
            layers.push_back(s);
        }
        return layers;
    };
    if (j.contains("encoder_layers")) {
        cfg.encoder_layers = parse_layers(j.at("encoder_layers"));
        cfg.decoder_layers = parse_layers(j.at("decoder_layers"));
    } else {
        cfg = surrogate::AeConfig::default_plan(cfg.state_channels, cfg.state_length,
                                                cfg.latent_dim, cfg.param_dim);
        cfg.act = ad::activation_from_string(j.value("activation", "gelu"));
    }
    cfg.validate();
    return cfg;
}

json ae_config_to_json(const surrogate::AeConfig& cfg) {
    auto layers_to_json = [](const std::vector<surrogate::PatchSpec>& layers) {
        json arr = json::array();
        for (const auto& s : layers)
            arr.push_back({{"patches", s.num_patches},
                           {"in_channels", s.in_channels},
                           {"in_length", s.in_length},
                           {"embed_dim", s.embed_dim},
                           {"heads", s.num_heads},
                           {"ffn_hidden", s.ffn_hidden},
                           {"out_channels", s.out_channels},
                           {"out_patch_len", s.out_patch_len}});
        return arr;
    };
    return json{{"state_channels", cfg.state_channels},
                {"state_length", cfg.state_length},
                {"latent_dim", cfg.latent_dim},
                {"param_dim", cfg.param_dim},
                {"activation", ad::to_string(cfg.act)},
                {"encoder_layers", layers_to_json(cfg.encoder_layers)},
                {"decoder_layers", layers_to_json(cfg.decoder_layers)}};
}

surrogate::StepperConfig stepper_config_from_json(const json& j) {
    surrogate::StepperConfig cfg;
    cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
    cfg.memory = j.value("memory", 8);
    cfg.unroll = j.value("unroll", 4);
    cfg.param_dim = j.value("param_dim", 0);
    cfg.embed_dim = j.value("embed_dim", 32);
    cfg.num_blocks = j.value("num_blocks", 1);
    cfg.num_heads = j.value("num_heads", 2);
    cfg.ffn_hidden = j.value("ffn_hidden", 0);
    cfg.act = ad::activation_from_string(j.value("activation", "gelu"));
    cfg.validate();
    return cfg;
}

json stepper_config_to_json(const surrogate::StepperConfig& cfg) {
    return json{{"latent_dim", cfg.latent_dim},   {"memory", cfg.memory},
                {"unroll", cfg.unroll},           {"param_dim", cfg.param_dim},
                {"embed_dim", cfg.embed_dim},     {"num_blocks", cfg.num_blocks},
                {"num_heads", cfg.num_heads},     {"ffn_hidden", cfg.ffn_hidden},
                {"activation", ad::to_string(cfg.act)}};
}

models::BurgersConfig burgers_config(const ExperimentConfig& cfg) {
    if (cfg.get<std::string>("model.kind", "burgers") != "burgers")
        throw ConfigError("model.kind is not 'burgers'");
    models::BurgersConfig b;
    b.length = cfg.get<double>("model.length", 2.0);
    b.grid_size = cfg.get<std::size_t>("model.grid_size", 128);
    b.viscosity = cfg.get<double>("model.viscosity", 1.0 / 150.0);
    b.dt = cfg.get<double>("model.dt", 1e-3);
    b.n_steps = cfg.get<std::size_t>("model.n_steps", 300);
    b.q_lo = cfg.get<double>("model.q_lo", 0.5);
    b.q_hi = cfg.get<double>("model.q_hi", 1.5);
    b.validate();
    return b;
}

models::LinearGaussianSSM linear_gaussian_config(const ExperimentConfig& cfg) {
    models::LinearGaussianSSM ssm;
    const double a = cfg.get<double>("model.a", 0.9);
    const double q = cfg.get<double>("model.process_std", 0.1);
    const double r = cfg.get<double>("model.obs_std", 0.5);
    const double m0 = cfg.get<double>("model.init_mean", 0.0);
    const double s0 = cfg.get<double>("model.init_std", 1.0);
    ssm.transition = models::Mat(1, 1);
    ssm.transition(0, 0) = a;
    ssm.observation = models::Mat::eye(1);
    ssm.process_cov = models::Mat(1, 1);
    ssm.process_cov(0, 0) = q * q;
    ssm.obs_cov = models::Mat(1, 1);
    ssm.obs_cov(0, 0) = r * r;
    ssm.init_mean = {m0};
    ssm.init_cov = models::Mat(1, 1);
    ssm.init_cov(0, 0) = s0 * s0;
    ssm.validate();
    return ssm;
}

da::ObservationOperator observation_operator(const ExperimentConfig& cfg) {
    const std::string kind = cfg.get<std::string>("model.kind", "burgers");
    if (kind == "linear_gaussian") {
        da::ObservationOperator h;
        h.indices = {0};
        return h;
    }
    const models::BurgersConfig b = burgers_config(cfg);
    std::vector<double> positions = cfg.get<std::vector<double>>(
        "model.sensor_positions",
        {0.0, 0.286, 0.571, 0.857, 1.143, 1.429, 1.714, 2.0});
    return da::ObservationOperator::from_positions(positions, b.length, b.grid_size);
}

filter::ModelBundle load_bundle(const std::string& ae_dir, const std::string& dyn_dir) {
    std::istringstream ae_meta_in(io::read_file_bytes(join(ae_dir, "ae_meta.json")));
    json ae_meta;
    ae_meta_in >> ae_meta;
    const surrogate::AeConfig ae_cfg = ae_config_from_json(ae_meta.at("ae_config"));
    auto enc = io::read_checkpoint_file(join(ae_dir, "encoder.ckpt"));
    auto dec = io::read_checkpoint_file(join(ae_dir, "decoder.ckpt"));
    auto norm = io::read_checkpoint_file(join(ae_dir, "norm.ckpt"));

    std::istringstream dyn_meta_in(io::read_file_bytes(join(dyn_dir, "dyn_meta.json")));
    json dyn_meta;
    dyn_meta_in >> dyn_meta;
    const surrogate::StepperConfig dyn_cfg = stepper_config_from_json(dyn_meta.at("stepper_config"));
    auto dyn = io::read_checkpoint_file(join(dyn_dir, "stepper.ckpt"));

    filter::ModelBundle bundle{surrogate::Autoencoder::from_checkpoints(ae_cfg, enc, dec),
                               surrogate::LatentStepper::from_checkpoint(dyn_cfg, dyn),
                               surrogate::NormStats::from_checkpoint(norm),
                               ae_meta.value("config_hash", "")};
    bundle.validate();
    return bundle;
}

FilterProblem build_filter_problem(const ExperimentConfig& cfg, std::uint64_t seed) {
    FilterProblem prob;
    const std::string kind = cfg.get<std::string>("model.kind", "burgers");
    const std::size_t stride = cfg.get<std::size_t>("model.obs_stride", 10);
    const double obs_noise = cfg.get<double>("model.obs_noise_std", 0.1);
    const da::ObservationOperator h = observation_operator(cfg);
    if (kind == "burgers") {
        const models::BurgersConfig b = burgers_config(cfg);
        double amp = cfg.get<double>("filter.truth_amplitude", 0.0);
        if (amp <= 0.0) {
            RngStream rng(seed, substream_id(kTruthTag, 0, 0));
            amp = rng.uniform(b.q_lo, b.q_hi);
        }
        prob.truth_amplitude = amp;
        prob.truth = simulate_burgers(b, amp);
        for (std::size_t s = stride; s <= b.n_steps; s += stride) {
            std::vector<double> y = h.observe(prob.truth[s]);
            RngStream rng(seed, substream_id(kObsNoiseTag, s, 0));
            for (double& v : y) v += obs_noise * rng.normal();
            prob.observations.push_back(std::move(y));
            prob.obs_steps.push_back(s);
        }
    } else if (kind == "linear_gaussian") {
        const models::LinearGaussianSSM ssm = linear_gaussian_config(cfg);
        const std::size_t n_steps = cfg.get<std::size_t>("model.n_steps", 100);
        const auto traj = models::simulate_ssm(ssm, n_steps, seed, kTruthTag);
        prob.truth = traj.states;
        prob.observations = traj.observations;
        for (std::size_t s = 1; s <= n_steps; ++s) prob.obs_steps.push_back(s);
    } else {
        throw ConfigError("unknown model.kind '" + kind + "'");
    }
    return prob;
}

// ---------------------------------------------------------------- simulate

json cmd_simulate(ExperimentConfig cfg0, const std::string& out_dir, const RunContext& ctx) {
    const ExperimentConfig cfg = apply_overrides(std::move(cfg0), ctx);
    const double t0 = now_s();
    const models::BurgersConfig b = burgers_config(cfg);
    const std::size_t n_train = cfg.get<std::size_t>("model.n_train", 256);
    const std::size_t n_test = cfg.get<std::size_t>("model.n_test", 20);
    const std::uint64_t seed = cfg.seed();

    const auto train = models::generate_dataset(b, n_train, seed, kTrainTag);
    const auto test = models::generate_dataset(b, n_test, seed, kTestTag);

    fs::create_directories(out_dir);
    auto to_f32 = [](const ad::Tensor& t) {
        ad::Tensor out(t.shape(), ad::Dtype::f32, false);
        out.value() = t.value();
        for (double& v : out.value()) v = static_cast<double>(static_cast<float>(v));
        return out;
    };
    io::write_tensor_file(join(out_dir, "train_trajectories.ltsf"), to_f32(train.trajectories));
    io::write_tensor_file(join(out_dir, "train_amplitudes.ltsf"), train.amplitudes);
    io::write_tensor_file(join(out_dir, "test_trajectories.ltsf"), to_f32(test.trajectories));
    io::write_tensor_file(join(out_dir, "test_amplitudes.ltsf"), test.amplitudes);

    json det{{"stage", "simulate"},
             {"name", cfg.name()},
             {"config_hash", cfg.hash()},
             {"seed", seed},
             {"train_count", n_train},
             {"test_count", n_test},
             {"files",
              {"train_trajectories.ltsf", "train_amplitudes.ltsf", "test_trajectories.ltsf",
               "test_amplitudes.ltsf"}}};
    det["result_hash"] = result_hash(det, out_dir,
                                     {"train_trajectories.ltsf", "train_amplitudes.ltsf",
                                      "test_trajectories.ltsf", "test_amplitudes.ltsf"});
    json manifest = det;
    manifest["runtime"] = {{"workers", ctx.workers}, {"seconds", now_s() - t0}};
    write_manifest(out_dir, manifest);
    return manifest;
}

// ---------------------------------------------------------------- train-ae

namespace {

struct SnapshotSet {
    ad::Tensor snapshots;  // [N, C, X]
    ad::Tensor params;     // [N, Nm] or undefined
};

SnapshotSet collect_snapshots(const ad::Tensor& trajectories, const ad::Tensor& amplitudes,
                              std::size_t stride, std::size_t param_dim) {
    const std::size_t n_traj = trajectories.extent(0);
    const std::size_t t_len = trajectories.extent(1);
    const std::size_t nx = trajectories.extent(2);
    std::vector<std::size_t> picks;
    for (std::size_t s = 0; s < t_len; s += stride) picks.push_back(s);
    SnapshotSet out;
    const std::size_t n = n_traj * picks.size();
    out.snapshots = ad::Tensor::zeros({n, 1, nx});
    if (param_dim > 0) out.params = ad::Tensor::zeros({n, param_dim});
    std::size_t row = 0;
    for (std::size_t tr = 0; tr < n_traj; ++tr)
        for (std::size_t p : picks) {
            std::copy_n(trajectories.value().data() + (tr * t_len + p) * nx, nx,
                        out.snapshots.value().begin() + row * nx);
            if (param_dim > 0) out.params.value()[row] = amplitudes.value()[tr];
            ++row;
        }
    return out;
}

std::string history_csv(const surrogate::TrainHistory& history) {
    std::ostringstream csv;
    csv << "epoch,recon,mmd,consistency,reg,total\n";
    csv.precision(12);
    for (const auto& r : history)
        csv << r.epoch << ',' << r.recon << ',' << r.mmd << ',' << r.consistency << ',' << r.reg
            << ',' << r.total << '\n';
    return csv.str();
}

}  // namespace

json cmd_train_ae(ExperimentConfig cfg0, const std::string& out_dir, const RunContext& ctx) {
    const ExperimentConfig cfg = apply_overrides(std::move(cfg0), ctx);
    const double t0 = now_s();
    const std::string data_dir = require_path(cfg, "paths.data_dir");
    const ad::Tensor trajectories =
        io::read_tensor_file(join(data_dir, "train_trajectories.ltsf"));
    const ad::Tensor amplitudes = io::read_tensor_file(join(data_dir, "train_amplitudes.ltsf"));

    const std::size_t param_dim = cfg.get<std::size_t>("ae.param_dim", 0);
    const std::size_t stride = cfg.get<std::size_t>("ae.snapshot_stride", 10);
    SnapshotSet set = collect_snapshots(trajectories, amplitudes, stride, param_dim);

    const surrogate::NormStats stats = surrogate::compute_norm_stats(set.snapshots, set.params);
    const ad::Tensor snaps_norm = surrogate::minmax_normalize(set.snapshots, stats);
    const ad::Tensor params_norm =
        param_dim > 0 ? surrogate::minmax_normalize_params(set.params, stats) : ad::Tensor();

    json ae_json = cfg.root().value("ae", json::object());
    ae_json["state_length"] = trajectories.extent(2);
    const surrogate::AeConfig ae_cfg = ae_config_from_json(ae_json);

    surrogate::Autoencoder ae = surrogate::Autoencoder::init(ae_cfg, cfg.seed());
    surrogate::AeTrainConfig train_cfg;
    train_cfg.epochs = cfg.get<std::size_t>("ae.epochs", 40);
    train_cfg.batch_size = cfg.get<std::size_t>("ae.batch_size", 32);
    train_cfg.clip_norm = cfg.get<double>("ae.clip_norm", 1.0);
    train_cfg.seed = cfg.seed();
    train_cfg.weights.alpha = cfg.get<double>("ae.weights.alpha", 1e-8);
    train_cfg.weights.beta = cfg.get<double>("ae.weights.beta", 0.5);
    train_cfg.weights.lambda = cfg.get<double>("ae.weights.lambda", 0.05);
    train_cfg.weights.kernel_c = cfg.get<double>("ae.weights.kernel_c", 0.0);
    train_cfg.lr = lr_from_json(cfg.root().value("ae", json::object()).value("lr", json::object()), 0);

    const auto history = train_autoencoder(ae, snaps_norm, params_norm, train_cfg);

    fs::create_directories(out_dir);
    const std::string hash = cfg.hash();
    io::write_checkpoint_file(join(out_dir, "encoder.ckpt"), ae.encoder_checkpoint(hash));
    io::write_checkpoint_file(join(out_dir, "decoder.ckpt"), ae.decoder_checkpoint(hash));
    auto norm_ckpt = stats.to_checkpoint();
    norm_ckpt.config_hash = hash;
    io::write_checkpoint_file(join(out_dir, "norm.ckpt"), norm_ckpt);
    io::atomic_write_file(join(out_dir, "loss.csv"), history_csv(history));
    json meta{{"ae_config", ae_config_to_json(ae_cfg)}, {"config_hash", hash}};
    io::atomic_write_file(join(out_dir, "ae_meta.json"), meta.dump(2) + "\n");

    json det{{"stage", "train-ae"},
             {"name", cfg.name()},
             {"config_hash", hash},
             {"seed", cfg.seed()},
             {"snapshots", set.snapshots.extent(0)},
             {"epochs", train_cfg.epochs},
             {"final_recon", history.empty() ? 0.0 : history.back().recon},
             {"final_total", history.empty() ? 0.0 : history.back().total}};
    det["result_hash"] = result_hash(
        det, out_dir, {"encoder.ckpt", "decoder.ckpt", "norm.ckpt", "loss.csv", "ae_meta.json"});
    json manifest = det;
    manifest["runtime"] = {{"workers", ctx.workers}, {"seconds", now_s() - t0}};
    write_manifest(out_dir, manifest);
    return manifest;
}

// ---------------------------------------------------------------- train-dyn

json cmd_train_dyn(ExperimentConfig cfg0, const std::string& out_dir, const RunContext& ctx) {
    const ExperimentConfig cfg = apply_overrides(std::move(cfg0), ctx);
    const double t0 = now_s();
    const std::string data_dir = require_path(cfg, "paths.data_dir");
    const std::string ae_dir = require_path(cfg, "paths.ae_dir");

    std::istringstream ae_meta_in(io::read_file_bytes(join(ae_dir, "ae_meta.json")));
    json ae_meta;
    ae_meta_in >> ae_meta;
    const surrogate::AeConfig ae_cfg = ae_config_from_json(ae_meta.at("ae_config"));
    const surrogate::Autoencoder ae = surrogate::Autoencoder::from_checkpoints(
        ae_cfg, io::read_checkpoint_file(join(ae_dir, "encoder.ckpt")),
        io::read_checkpoint_file(join(ae_dir, "decoder.ckpt")));
    const surrogate::NormStats stats =
        surrogate::NormStats::from_checkpoint(io::read_checkpoint_file(join(ae_dir, "norm.ckpt")));

    const std::size_t latent_dim = cfg.get<std::size_t>("stepper.latent_dim", ae_cfg.latent_dim);
    if (latent_dim != ae_cfg.latent_dim)
        throw ConfigError("stepper latent_dim " + std::to_string(latent_dim) +
                          " does not match autoencoder latent_dim " +
                          std::to_string(ae_cfg.latent_dim));

    const ad::Tensor trajectories =
        io::read_tensor_file(join(data_dir, "train_trajectories.ltsf"));
    const ad::Tensor amplitudes = io::read_tensor_file(join(data_dir, "train_amplitudes.ltsf"));
    const std::size_t n_traj = trajectories.extent(0);
    const std::size_t t_len = trajectories.extent(1);
    const std::size_t nx = trajectories.extent(2);
    const std::size_t time_stride = cfg.get<std::size_t>("stepper.time_stride", 10);
    std::vector<std::size_t> picks;
    for (std::size_t s = 0; s < t_len; s += time_stride) picks.push_back(s);

    // encode each trajectory's strided snapshots in one batch
    ad::Tensor latents = ad::Tensor::zeros({n_traj, picks.size(), ae_cfg.latent_dim});
    for (std::size_t tr = 0; tr < n_traj; ++tr) {
        ad::Tensor batch({picks.size(), 1, nx}, ae_cfg.dtype, false);
        for (std::size_t i = 0; i < picks.size(); ++i)
            std::copy_n(trajectories.value().data() + (tr * t_len + picks[i]) * nx, nx,
                        batch.value().begin() + i * nx);
        const ad::Tensor z = ae.encode(surrogate::minmax_normalize(batch, stats));
        std::copy(z.value().begin(), z.value().end(),
                  latents.value().begin() + tr * picks.size() * ae_cfg.latent_dim);
    }
    fs::create_directories(out_dir);
    io::write_tensor_file(join(out_dir, "latents.ltsf"), latents);

    ad::Tensor params_norm;
    const std::size_t param_dim = cfg.get<std::size_t>("stepper.param_dim", ae_cfg.param_dim);
    if (param_dim != ae_cfg.param_dim)
        throw ConfigError("stepper param_dim does not match autoencoder param_dim");
    if (param_dim > 0) {
        ad::Tensor p({n_traj, param_dim}, ad::Dtype::f64, false);
        for (std::size_t tr = 0; tr < n_traj; ++tr) p.value()[tr] = amplitudes.value()[tr];
        params_norm = surrogate::minmax_normalize_params(p, stats);
    }

    json dyn_json = cfg.root().value("stepper", json::object());
    dyn_json["latent_dim"] = ae_cfg.latent_dim;
    dyn_json["param_dim"] = param_dim;
    const surrogate::StepperConfig dyn_cfg = stepper_config_from_json(dyn_json);
    surrogate::LatentStepper stepper = surrogate::LatentStepper::init(dyn_cfg, cfg.seed());

    surrogate::StepperTrainConfig train_cfg;
    train_cfg.epochs = cfg.get<std::size_t>("stepper.epochs", 60);
    train_cfg.batch_size = cfg.get<std::size_t>("stepper.batch_size", 16);
    train_cfg.windows_per_epoch = cfg.get<std::size_t>("stepper.windows_per_epoch", 2048);
    train_cfg.clip_norm = cfg.get<double>("stepper.clip_norm", 1.0);
    train_cfg.alpha = cfg.get<double>("stepper.alpha", 1e-8);
    train_cfg.seed = cfg.seed();
    train_cfg.lr =
        lr_from_json(cfg.root().value("stepper", json::object()).value("lr", json::object()), 0);

    const auto history = train_stepper(stepper, latents, params_norm, train_cfg);

    const std::string hash = cfg.hash();
    io::write_checkpoint_file(join(out_dir, "stepper.ckpt"), stepper.to_checkpoint(hash));
    std::ostringstream csv;
    csv << "epoch,loss,reg\n";
    csv.precision(12);
    for (const auto& r : history) csv << r.epoch << ',' << r.loss << ',' << r.reg << '\n';
    io::atomic_write_file(join(out_dir, "loss.csv"), csv.str());
    json meta{{"stepper_config", stepper_config_to_json(dyn_cfg)},
              {"time_stride", time_stride},
              {"config_hash", hash}};
    io::atomic_write_file(join(out_dir, "dyn_meta.json"), meta.dump(2) + "\n");

    json det{{"stage", "train-dyn"},
             {"name", cfg.name()},
             {"config_hash", hash},
             {"seed", cfg.seed()},
             {"latent_shape", {n_traj, picks.size(), ae_cfg.latent_dim}},
             {"final_loss", history.empty() ? 0.0 : history.back().loss}};
    det["result_hash"] =
        result_hash(det, out_dir, {"stepper.ckpt", "loss.csv", "dyn_meta.json", "latents.ltsf"});
    json manifest = det;
    manifest["runtime"] = {{"workers", ctx.workers}, {"seconds", now_s() - t0}};
    write_manifest(out_dir, manifest);
    return manifest;
}

// ---------------------------------------------------------------- filter

namespace {

std::vector<da::AugmentedState> burgers_initial_ensemble(const models::BurgersConfig& b,
                                                         std::size_t n, std::uint64_t seed,
                                                         bool estimate_amplitude) {
    std::vector<da::AugmentedState> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        RngStream rng(seed, substream_id(kInitTag, i, 0));
        const double amp = rng.uniform(b.q_lo, b.q_hi);
        out[i].q = models::burgers_initial(b, amp);
        if (estimate_amplitude) out[i].m = {amp};
    }
    return out;
}

json filter_summary_json(const filter::FilterResult& res) {
    json j;
    j["n_particles"] = res.n_particles;
    j["state_dim"] = res.state_dim;
    j["param_dim"] = res.param_dim;
    j["obs_model_steps"] = res.obs_model_steps;
    j["ess"] = res.ess;
    std::vector<int> resampled(res.resampled.begin(), res.resampled.end());
    j["resampled"] = resampled;
    if (!res.param_mean.empty()) j["param_mean"] = res.param_mean;
    return j;
}

void write_filter_outputs(const std::string& out_dir, const filter::FilterResult& res,
                          const FilterProblem& prob) {
    const std::size_t n_obs = res.ensembles.size();
    ad::Tensor ens({n_obs, res.n_particles, res.state_dim}, ad::Dtype::f64, false);
    ad::Tensor wts({n_obs, res.n_particles}, ad::Dtype::f64, false);
    ad::Tensor mean({n_obs, res.state_dim}, ad::Dtype::f64, false);
    ad::Tensor sd({n_obs, res.state_dim}, ad::Dtype::f64, false);
    ad::Tensor truth({n_obs, res.state_dim}, ad::Dtype::f64, false);
    for (std::size_t t = 0; t < n_obs; ++t) {
        std::copy(res.ensembles[t].begin(), res.ensembles[t].end(),
                  ens.value().begin() + t * res.n_particles * res.state_dim);
        std::copy(res.weights_history[t].begin(), res.weights_history[t].end(),
                  wts.value().begin() + t * res.n_particles);
        std::copy(res.mean[t].begin(), res.mean[t].end(),
                  mean.value().begin() + t * res.state_dim);
        std::copy(res.std_dev[t].begin(), res.std_dev[t].end(),
                  sd.value().begin() + t * res.state_dim);
        const auto& ts = prob.truth[prob.obs_steps[t]];
        std::copy(ts.begin(), ts.end(), truth.value().begin() + t * res.state_dim);
    }
    io::write_tensor_file(join(out_dir, "ensembles.ltsf"), ens);
    io::write_tensor_file(join(out_dir, "weights.ltsf"), wts);
    io::write_tensor_file(join(out_dir, "mean.ltsf"), mean);
    io::write_tensor_file(join(out_dir, "std.ltsf"), sd);
    io::write_tensor_file(join(out_dir, "truth.ltsf"), truth);
    if (res.param_dim > 0) {
        ad::Tensor pens({n_obs, res.n_particles, res.param_dim}, ad::Dtype::f64, false);
        for (std::size_t t = 0; t < n_obs; ++t)
            std::copy(res.param_ensembles[t].begin(), res.param_ensembles[t].end(),
                      pens.value().begin() + t * res.n_particles * res.param_dim);
        io::write_tensor_file(join(out_dir, "param_ensembles.ltsf"), pens);
    }
}

}  // namespace

json cmd_filter(ExperimentConfig cfg0, const std::string& out_dir, const RunContext& ctx) {
    const ExperimentConfig cfg = apply_overrides(std::move(cfg0), ctx);
    const double t0 = now_s();
    const std::string kind = cfg.get<std::string>("model.kind", "burgers");
    const std::uint64_t seed = cfg.seed();
    const std::string mode = ctx.mode.empty() ? cfg.get<std::string>("filter.mode", "hf") : ctx.mode;

    filter::FilterConfig fcfg;
    fcfg.n_particles = cfg.get<std::size_t>("filter.n_particles", 100);
    fcfg.ess_threshold = cfg.get<double>("filter.ess_threshold", 0.0);
    fcfg.seed = seed;
    fcfg.workers = ctx.workers == 0 ? 1 : ctx.workers;

    const FilterProblem prob = build_filter_problem(cfg, seed);
    const da::ObservationOperator h = observation_operator(cfg);
    const double obs_noise = kind == "linear_gaussian" ? cfg.get<double>("model.obs_std", 0.5)
                                                       : cfg.get<double>("model.obs_noise_std", 0.1);

    filter::FilterResult result;
    std::vector<std::vector<double>> latent_ensembles;
    if (mode == "hf") {
        if (kind == "burgers") {
            const models::BurgersConfig b = burgers_config(cfg);
            const std::size_t stride = cfg.get<std::size_t>("model.obs_stride", 10);
            const bool estimate_amp = cfg.get<bool>("filter.estimate_amplitude", false);
            auto initial = burgers_initial_ensemble(b, fcfg.n_particles, seed, estimate_amp);
            // process noise on interior nodes keeps the Dirichlet boundaries
            da::GaussianNoise xi;
            xi.std.assign(b.grid_size, cfg.get<double>("filter.process_noise_std", 0.005));
            xi.std.front() = 0.0;
            xi.std.back() = 0.0;
            da::GaussianNoise zeta;
            if (estimate_amp) {
                const double frac = cfg.get<double>("filter.param_jitter_frac", 0.01);
                zeta = da::GaussianNoise::iid(frac * (b.q_hi - b.q_lo), 1);
            }
            filter::AdvanceFn advance = [b](std::vector<double>& q,
                                            const std::vector<double>&, std::size_t) {
                static thread_local models::Rk4Workspace ws;
                models::rk_step_inplace(
                    q, b.dt, [&b](const models::State& s, models::State& o) {
                        models::burgers_rhs(s, b, o);
                    },
                    ws);
            };
            result = filter::hf_filter(std::move(initial), advance, xi, zeta, prob.observations,
                                       h, obs_noise, stride, fcfg);
        } else {
            const models::LinearGaussianSSM ssm = linear_gaussian_config(cfg);
            const double a = ssm.transition(0, 0);
            std::vector<da::AugmentedState> initial(fcfg.n_particles);
            for (std::size_t i = 0; i < fcfg.n_particles; ++i) {
                RngStream rng(seed, substream_id(kInitTag, i, 0));
                initial[i].q = {ssm.init_mean[0] + std::sqrt(ssm.init_cov(0, 0)) * rng.normal()};
            }
            const da::GaussianNoise xi = da::GaussianNoise::iid(std::sqrt(ssm.process_cov(0, 0)), 1);
            filter::AdvanceFn advance = [a](std::vector<double>& q, const std::vector<double>&,
                                            std::size_t) { q[0] *= a; };
            result = filter::hf_filter(std::move(initial), advance, xi, {}, prob.observations, h,
                                       obs_noise, 1, fcfg);
        }
    } else if (mode == "latent") {
        if (kind != "burgers") throw ConfigError("latent filtering requires the burgers model");
        const models::BurgersConfig b = burgers_config(cfg);
        const std::size_t stride = cfg.get<std::size_t>("model.obs_stride", 10);
        const auto bundle = load_bundle(require_path(cfg, "paths.ae_dir"),
                                        require_path(cfg, "paths.dyn_dir"));
        std::istringstream dyn_meta_in(
            io::read_file_bytes(join(require_path(cfg, "paths.dyn_dir"), "dyn_meta.json")));
        json dyn_meta;
        dyn_meta_in >> dyn_meta;
        const std::size_t time_stride = dyn_meta.value("time_stride", 10);
        if (stride % time_stride != 0)
            throw ConfigError("obs_stride must be a multiple of the stepper's time_stride");
        filter::DlspfOptions opts;
        opts.steps_per_obs = stride / time_stride;
        opts.latent_noise_std = cfg.get<double>("filter.latent_noise_std", 0.01);
        const bool estimate_amp = cfg.get<bool>("filter.estimate_amplitude", false);
        if (estimate_amp != (bundle.ae.cfg.param_dim > 0))
            throw ConfigError("filter.estimate_amplitude does not match the trained bundle");
        if (estimate_amp) {
            const double frac = cfg.get<double>("filter.param_jitter_frac", 0.01);
            opts.param_jitter_std = frac * (b.q_hi - b.q_lo);
        }
        auto initial = burgers_initial_ensemble(b, fcfg.n_particles, seed, estimate_amp);
        auto dres = filter::run_dlspf(initial, prob.observations, bundle, h, obs_noise, opts, fcfg);
        result = std::move(dres.filter);
        latent_ensembles = std::move(dres.latent_ensembles);
    } else {
        throw ConfigError("filter mode must be 'hf' or 'latent'");
    }

    fs::create_directories(out_dir);
    write_filter_outputs(out_dir, result, prob);
    std::vector<std::string> files{"ensembles.ltsf", "weights.ltsf", "mean.ltsf", "std.ltsf",
                                   "truth.ltsf"};
    if (result.param_dim > 0) files.push_back("param_ensembles.ltsf");
    if (!latent_ensembles.empty()) {
        ad::Tensor lat({latent_ensembles.size(), result.n_particles,
                        latent_ensembles.front().size() / result.n_particles},
                       ad::Dtype::f64, false);
        for (std::size_t t = 0; t < latent_ensembles.size(); ++t)
            std::copy(latent_ensembles[t].begin(), latent_ensembles[t].end(),
                      lat.value().begin() + t * latent_ensembles[t].size());
        io::write_tensor_file(join(out_dir, "latent_ensembles.ltsf"), lat);
        files.push_back("latent_ensembles.ltsf");
    }

    json det = filter_summary_json(result);
    det["stage"] = "filter";
    det["name"] = cfg.name();
    det["config_hash"] = cfg.hash();
    det["seed"] = seed;
    det["mode"] = mode;
    det["truth_amplitude"] = prob.truth_amplitude;
    det["files"] = files;
    det["result_hash"] = result_hash(det, out_dir, files);
    json manifest = det;
    manifest["runtime"] = {{"workers", fcfg.workers},
                           {"seconds", now_s() - t0},
                           {"timings",
                            {{"step_s", result.timings.step_s},
                             {"decode_s", result.timings.decode_s},
                             {"weight_s", result.timings.weight_s},
                             {"resample_s", result.timings.resample_s},
                             {"total_s", result.timings.total_s}}}};
    write_manifest(out_dir, manifest);
    return manifest;
}

// ---------------------------------------------------------------- evaluate

namespace {

struct LoadedRun {
    json manifest;
    ad::Tensor ensembles;  // [T, N, D]
    ad::Tensor weights;    // [T, N]
    ad::Tensor truth;      // [T, D]
    ad::Tensor param_ensembles;  // optional [T, N, Pm]
};

LoadedRun load_run(const std::string& dir) {
    LoadedRun run;
    run.manifest = load_manifest(dir);
    run.ensembles = io::read_tensor_file(join(dir, "ensembles.ltsf"));
    run.weights = io::read_tensor_file(join(dir, "weights.ltsf"));
    run.truth = io::read_tensor_file(join(dir, "truth.ltsf"));
    if (fs::exists(join(dir, "param_ensembles.ltsf")))
        run.param_ensembles = io::read_tensor_file(join(dir, "param_ensembles.ltsf"));
    return run;
}

metrics::EnsembleSeries to_series(const LoadedRun& run) {
    metrics::EnsembleSeries s;
    const std::size_t t_len = run.ensembles.extent(0);
    s.n = run.ensembles.extent(1);
    s.d = run.ensembles.extent(2);
    for (std::size_t t = 0; t < t_len; ++t) {
        s.steps.emplace_back(run.ensembles.value().begin() + t * s.n * s.d,
                             run.ensembles.value().begin() + (t + 1) * s.n * s.d);
        s.weights.emplace_back(run.weights.value().begin() + t * s.n,
                               run.weights.value().begin() + (t + 1) * s.n);
    }
    s.validate();
    return s;
}

std::vector<std::vector<double>> weighted_mean_series(const metrics::EnsembleSeries& s) {
    std::vector<std::vector<double>> out;
    for (std::size_t t = 0; t < s.size(); ++t) {
        std::vector<double> mean(s.d, 0.0);
        for (std::size_t i = 0; i < s.n; ++i)
            for (std::size_t j = 0; j < s.d; ++j)
                mean[j] += s.weight(t, i) * s.steps[t][i * s.d + j];
        out.push_back(std::move(mean));
    }
    return out;
}

}  // namespace

json cmd_evaluate(const std::vector<std::string>& run_dirs, const std::string& out_dir,
                  const ExperimentConfig& cfg) {
    if (run_dirs.empty() || run_dirs.size() > 2)
        throw ConfigError("evaluate expects one or two run directories");
    const double t0 = now_s();
    const LoadedRun a = load_run(run_dirs[0]);
    const LoadedRun b = load_run(run_dirs.size() == 2 ? run_dirs[1] : run_dirs[0]);

    const metrics::EnsembleSeries sa = to_series(a);
    const metrics::EnsembleSeries sb = to_series(b);
    const auto mean_a = weighted_mean_series(sa);
    const auto mean_b = weighted_mean_series(sb);

    const std::size_t t_len = sa.size();
    const std::size_t d = sa.d;
    std::vector<std::vector<double>> truth(t_len);
    for (std::size_t t = 0; t < t_len; ++t)
        truth[t].assign(a.truth.value().begin() + t * d, a.truth.value().begin() + (t + 1) * d);

    // with a comparison run, its posterior mean is the reference series;
    // a single run is scored against the stored truth
    const bool two_runs = run_dirs.size() == 2;
    const auto& reference = two_runs ? mean_b : truth;
    std::vector<double> mean_flat, ref_flat;
    for (std::size_t t = 0; t < t_len; ++t) {
        mean_flat.insert(mean_flat.end(), mean_a[t].begin(), mean_a[t].end());
        ref_flat.insert(ref_flat.end(), reference[t].begin(), reference[t].end());
    }

    metrics::MetricReport report;
    report.rmse = metrics::rmse(mean_flat, ref_flat);
    report.rrmse = metrics::rrmse(mean_flat, ref_flat);
    report.amrmse = metrics::amrmse(sa, sb);
    report.nll = metrics::nll_gaussian(sa, reference);
    report.picp = metrics::picp(sa, truth);
    if (a.param_ensembles.defined() && b.param_ensembles.defined()) {
        const std::size_t last = a.param_ensembles.extent(0) - 1;
        const std::size_t na = a.param_ensembles.extent(1);
        const std::size_t nb = b.param_ensembles.extent(1);
        std::vector<double> pa(a.param_ensembles.value().begin() + last * na,
                               a.param_ensembles.value().begin() + (last + 1) * na);
        std::vector<double> pb(b.param_ensembles.value().begin() + last * nb,
                               b.param_ensembles.value().begin() + (last + 1) * nb);
        report.wasserstein1 = metrics::wasserstein1_1d(pa, pb);
    }
    const std::size_t window =
        std::min<std::size_t>(cfg.get<std::size_t>("metrics.window", 10), t_len);
    report.windowed_rrmse = metrics::windowed_rrmse(mean_a, reference, window);
    report.validate();

    fs::create_directories(out_dir);
    const json report_json = report.to_json();
    metrics::validate_metric_report_json(report_json);
    io::atomic_write_file(join(out_dir, "report.json"), report_json.dump(2) + "\n");

    std::ostringstream per_step;
    per_step << "obs_index,rmse,ess\n";
    per_step.precision(12);
    const auto ess = a.manifest.value("ess", std::vector<double>{});
    for (std::size_t t = 0; t < t_len; ++t) {
        per_step << t << ',' << metrics::rmse(mean_a[t], truth[t]) << ','
                 << (t < ess.size() ? ess[t] : 0.0) << '\n';
    }
    io::atomic_write_file(join(out_dir, "per_step.csv"), per_step.str());
    std::ostringstream wr;
    wr << "window_start,rrmse\n";
    wr.precision(12);
    for (std::size_t i = 0; i < report.windowed_rrmse.size(); ++i)
        wr << i << ',' << report.windowed_rrmse[i] << '\n';
    io::atomic_write_file(join(out_dir, "windowed_rrmse.csv"), wr.str());

    json det{{"stage", "evaluate"},
             {"runs", run_dirs},
             {"report", report_json},
             {"config_hash", cfg.hash()}};
    det["result_hash"] = result_hash(det, out_dir, {"report.json"});
    json manifest = det;
    manifest["runtime"] = {{"seconds", now_s() - t0}};
    write_manifest(out_dir, manifest);
    return manifest;
}

}  // namespace pipeline
