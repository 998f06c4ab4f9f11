#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

namespace dlspf::metrics {

// Time series of ensembles: step t holds n (row) states of dimension d,
// flattened row-major, with optional per-step importance weights
// (uniform when absent).
struct EnsembleSeries {
    std::size_t n = 0;
    std::size_t d = 0;
    std::vector<std::vector<double>> steps;    // [T][n*d]
    std::vector<std::vector<double>> weights;  // [T][n] or empty

    std::size_t size() const { return steps.size(); }
    void validate() const;
    const double* state(std::size_t t, std::size_t i) const { return steps[t].data() + i * d; }
    double weight(std::size_t t, std::size_t i) const {
        return weights.empty() ? 1.0 / static_cast<double>(n) : weights[t][i];
    }
};

// Both series flattened over all entries.
double rmse(const std::vector<double>& estimate, const std::vector<double>& truth);
// ||estimate - truth||_2 / ||truth||_2; throws on zero-norm truth.
double rrmse(const std::vector<double>& estimate, const std::vector<double>& truth);

// Mean over the 2nd..4th central moments of the RMSE between the two
// ensembles' per-point moment fields. Ensemble sizes may differ; both
// need at least 5 members.
double amrmse(const EnsembleSeries& a, const EnsembleSeries& b);

// Fraction of (step, dim) points where truth lies inside the ensemble's
// [lo, hi] percentile band (weighted empirical quantiles).
double picp(const EnsembleSeries& ensemble, const std::vector<std::vector<double>>& truth,
            double lo_pct = 2.5, double hi_pct = 97.5);

// Per-dimension Gaussian moment fit of the ensemble evaluated at the
// reference, summed over dims, averaged over steps. Zero-spread dimensions
// floor the std at 1e-6.
double nll_gaussian(const EnsembleSeries& ensemble,
                    const std::vector<std::vector<double>>& reference);

// 1-D Wasserstein-1 distance between empirical distributions.
double wasserstein1_1d(std::vector<double> a, std::vector<double> b);

// RRMSE over sliding windows of `window` time steps; series are [T][d].
std::vector<double> windowed_rrmse(const std::vector<std::vector<double>>& estimate,
                                   const std::vector<std::vector<double>>& truth,
                                   std::size_t window);

// Weighted empirical quantile with linear interpolation, pct in [0, 100].
double weighted_percentile(std::vector<std::pair<double, double>> value_weight, double pct);

// Named scalar test functions over state vectors, used by convergence
// diagnostics: "mean", "moment2".."moment4", "component:<k>".
struct TestFunction {
    std::string name;
    std::function<double(const std::vector<double>&)> fn;
};
TestFunction make_test_function(const std::string& name);

struct MetricReport {
    double rmse = 0.0;
    double rrmse = 0.0;
    double amrmse = 0.0;
    double nll = 0.0;
    double picp = 0.0;
    double wasserstein1 = 0.0;
    std::vector<double> windowed_rrmse;

    void validate() const;  // finite entries, picp in [0, 1]
    nlohmann::json to_json() const;
    static MetricReport from_json(const nlohmann::json& j);
};

// Required keys and types of the serialized MetricReport; throws on
// schema violations.
void validate_metric_report_json(const nlohmann::json& j);

}  // namespace dlspf::metrics
