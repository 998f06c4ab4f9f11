#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "dlspf/burgers.hpp"
#include "dlspf/config.hpp"
#include "dlspf/filter.hpp"
#include "dlspf/kalman.hpp"
#include "dlspf/metrics.hpp"
#include "dlspf/stepper.hpp"
#include "dlspf/wae.hpp"

namespace dlspf::pipeline {

// JSON <-> typed config helpers (architecture sections are persisted next
// to checkpoints so models can be rebuilt without the original config).
surrogate::AeConfig ae_config_from_json(const nlohmann::json& j);
nlohmann::json ae_config_to_json(const surrogate::AeConfig& cfg);
surrogate::StepperConfig stepper_config_from_json(const nlohmann::json& j);
nlohmann::json stepper_config_to_json(const surrogate::StepperConfig& cfg);

models::BurgersConfig burgers_config(const ExperimentConfig& cfg);
models::LinearGaussianSSM linear_gaussian_config(const ExperimentConfig& cfg);
da::ObservationOperator observation_operator(const ExperimentConfig& cfg);

// Loads the persisted surrogate package written by train-ae / train-dyn.
filter::ModelBundle load_bundle(const std::string& ae_dir, const std::string& dyn_dir);

struct RunContext {
    std::uint64_t seed_override = 0;
    bool has_seed_override = false;
    std::size_t particles_override = 0;
    std::size_t workers = 1;
    std::string mode = "hf";  // filter stage only
};

// Each stage writes its outputs plus manifest.json into out_dir and
// returns the manifest. Wall-clock data lives under manifest["runtime"]
// and is excluded from result_hash.
nlohmann::json cmd_simulate(ExperimentConfig cfg, const std::string& out_dir,
                            const RunContext& ctx = {});
nlohmann::json cmd_train_ae(ExperimentConfig cfg, const std::string& out_dir,
                            const RunContext& ctx = {});
nlohmann::json cmd_train_dyn(ExperimentConfig cfg, const std::string& out_dir,
                             const RunContext& ctx = {});
nlohmann::json cmd_filter(ExperimentConfig cfg, const std::string& out_dir,
                          const RunContext& ctx = {});
nlohmann::json cmd_evaluate(const std::vector<std::string>& run_dirs,
                            const std::string& out_dir, const ExperimentConfig& cfg);

// Truth trajectory + synthetic observations used by the filter stage
// (deterministic in the config seed).
struct FilterProblem {
    std::vector<models::State> truth;                 // model-step resolution
    std::vector<std::vector<double>> observations;    // per observation time
    std::vector<std::size_t> obs_steps;               // model step per observation
    double truth_amplitude = 0.0;
};
FilterProblem build_filter_problem(const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace dlspf::pipeline
