#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dlspf/errors.hpp"
#include "dlspf/pipeline.hpp"

namespace {

// exit codes: 0 ok, 2 config, 3 degenerate ensemble, 4 training divergence, 5 I/O
int run(int argc, char** argv) {
    CLI::App app{"Latent-space particle filtering pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::string mode = "";
    std::vector<std::string> run_dirs;
    std::uint64_t seed = 0;
    bool seed_set = false;
    std::size_t particles = 0;
    std::size_t workers = 0;

    auto add_common = [&](CLI::App* cmd, bool needs_config) {
        auto* copt = cmd->add_option("--config", config_path, "experiment config JSON");
        if (needs_config) copt->required();
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option("--seed", seed, "override the config seed")
            ->each([&seed_set](const std::string&) { seed_set = true; });
        cmd->add_option("--workers", workers, "worker threads (or env DLSPF_WORKERS)");
    };

    auto* sim = app.add_subcommand("simulate", "generate train/test trajectories");
    add_common(sim, true);
    auto* tae = app.add_subcommand("train-ae", "train the autoencoder");
    add_common(tae, true);
    auto* tdyn = app.add_subcommand("train-dyn", "train the latent time stepper");
    add_common(tdyn, true);
    auto* flt = app.add_subcommand("filter", "run a data assimilation filter");
    add_common(flt, true);
    flt->add_option("--mode", mode, "hf or latent");
    flt->add_option("--particles", particles, "override filter.n_particles");
    auto* eval = app.add_subcommand("evaluate", "compute the metric report for run(s)");
    add_common(eval, true);
    eval->add_option("--run", run_dirs, "filter run directory (repeat for a comparison run)")
        ->required()
        ->expected(1, 2);

    CLI11_PARSE(app, argc, argv);

    dlspf::pipeline::RunContext ctx;
    ctx.has_seed_override = seed_set;
    ctx.seed_override = seed;
    ctx.particles_override = particles;
    if (workers == 0) {
        if (const char* env = std::getenv("DLSPF_WORKERS")) workers = std::strtoull(env, nullptr, 10);
    }
    ctx.workers = workers == 0 ? 1 : workers;

    auto cfg = dlspf::ExperimentConfig::load_file(config_path);
    nlohmann::json manifest;
    if (sim->parsed()) {
        manifest = dlspf::pipeline::cmd_simulate(cfg, out_dir, ctx);
    } else if (tae->parsed()) {
        manifest = dlspf::pipeline::cmd_train_ae(cfg, out_dir, ctx);
    } else if (tdyn->parsed()) {
        manifest = dlspf::pipeline::cmd_train_dyn(cfg, out_dir, ctx);
    } else if (flt->parsed()) {
        if (!mode.empty()) ctx.mode = mode;
        else ctx.mode = cfg.get<std::string>("filter.mode", "hf");
        manifest = dlspf::pipeline::cmd_filter(cfg, out_dir, ctx);
    } else if (eval->parsed()) {
        manifest = dlspf::pipeline::cmd_evaluate(run_dirs, out_dir, cfg);
    }
    std::cout << manifest.dump(2) << std::endl;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const dlspf::ConfigError& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return 2;
    } catch (const dlspf::ShapeError& e) {
        std::cerr << "config error: " << e.what() << std::endl;
        return 2;
    } catch (const dlspf::DegenerateEnsembleError& e) {
        std::cerr << "degenerate ensemble: " << e.what() << std::endl;
        return 3;
    } catch (const dlspf::TrainingDivergenceError& e) {
        std::cerr << "training diverged: " << e.what() << std::endl;
        return 4;
    } catch (const dlspf::SimulationBlowupError& e) {
        std::cerr << "simulation blow-up: " << e.what() << std::endl;
        return 4;
    } catch (const dlspf::IoError& e) {
        std::cerr << "i/o error: " << e.what() << std::endl;
        return 5;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << std::endl;
        return 1;
    }
}
