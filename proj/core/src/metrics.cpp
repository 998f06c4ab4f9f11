#include "dlspf/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "dlspf/errors.hpp"

namespace dlspf::metrics {

void EnsembleSeries::validate() const {
    if (n == 0 || d == 0) throw ShapeError("ensemble series: empty dimensions");
    for (const auto& s : steps)
        if (s.size() != n * d) throw ShapeError("ensemble series: step size mismatch");
    if (!weights.empty()) {
        if (weights.size() != steps.size())
            throw ShapeError("ensemble series: weights length mismatch");
        for (const auto& w : weights)
            if (w.size() != n) throw ShapeError("ensemble series: weight row mismatch");
    }
}

double rmse(const std::vector<double>& estimate, const std::vector<double>& truth) {
    if (estimate.size() != truth.size() || estimate.empty())
        throw ShapeError("rmse: series must be non-empty and equally sized");
    double acc = 0.0;
    for (std::size_t i = 0; i < estimate.size(); ++i) {
        const double e = estimate[i] - truth[i];
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(estimate.size()));
}

double rrmse(const std::vector<double>& estimate, const std::vector<double>& truth) {
    if (estimate.size() != truth.size() || estimate.empty())
        throw ShapeError("rrmse: series must be non-empty and equally sized");
    double err = 0.0;
    double ref = 0.0;
    for (std::size_t i = 0; i < estimate.size(); ++i) {
        const double e = estimate[i] - truth[i];
        err += e * e;
        ref += truth[i] * truth[i];
    }
    if (ref <= 0.0) throw std::runtime_error("rrmse: zero-norm truth");
    return std::sqrt(err / ref);
}

namespace {

// Weighted central moments 2..4 of one (step, dim) point.
void central_moments(const EnsembleSeries& s, std::size_t t, std::size_t j, double out[3]) {
    double mean = 0.0;
    for (std::size_t i = 0; i < s.n; ++i) mean += s.weight(t, i) * s.steps[t][i * s.d + j];
    double m2 = 0.0, m3 = 0.0, m4 = 0.0;
    for (std::size_t i = 0; i < s.n; ++i) {
        const double w = s.weight(t, i);
        const double d = s.steps[t][i * s.d + j] - mean;
        const double d2 = d * d;
        m2 += w * d2;
        m3 += w * d2 * d;
        m4 += w * d2 * d2;
    }
    out[0] = m2;
    out[1] = m3;
    out[2] = m4;
}

}  // namespace

double amrmse(const EnsembleSeries& a, const EnsembleSeries& b) {
    a.validate();
    b.validate();
    if (a.n < 5 || b.n < 5) throw ShapeError("amrmse: ensembles need at least 5 members");
    if (a.d != b.d || a.size() != b.size())
        throw ShapeError("amrmse: ensemble series shapes differ");
    const std::size_t points = a.size() * a.d;
    double acc[3] = {0.0, 0.0, 0.0};
    for (std::size_t t = 0; t < a.size(); ++t)
        for (std::size_t j = 0; j < a.d; ++j) {
            double ma[3], mb[3];
            central_moments(a, t, j, ma);
            central_moments(b, t, j, mb);
            for (int k = 0; k < 3; ++k) {
                const double e = ma[k] - mb[k];
                acc[k] += e * e;
            }
        }
    double total = 0.0;
    for (int k = 0; k < 3; ++k) total += std::sqrt(acc[k] / static_cast<double>(points));
    return total / 3.0;
}

double weighted_percentile(std::vector<std::pair<double, double>> value_weight, double pct) {
    if (value_weight.empty()) throw ShapeError("weighted_percentile: empty sample");
    if (pct < 0.0 || pct > 100.0) throw ShapeError("weighted_percentile: pct out of range");
    std::sort(value_weight.begin(), value_weight.end());
    double wsum = 0.0;
    for (const auto& [v, w] : value_weight) wsum += w;
    // cumulative midpoint rule with linear interpolation
    const double target = pct / 100.0 * wsum;
    double acc = 0.0;
    for (std::size_t i = 0; i < value_weight.size(); ++i) {
        const double next = acc + value_weight[i].second;
        if (target <= next || i + 1 == value_weight.size()) {
            if (i == 0 || value_weight[i].second <= 0.0) return value_weight[i].first;
            const double frac = (target - acc) / value_weight[i].second;
            const double prev_v = value_weight[i - 1].first;
            return prev_v + (value_weight[i].first - prev_v) * std::clamp(frac, 0.0, 1.0);
        }
        acc = next;
    }
    return value_weight.back().first;
}

double picp(const EnsembleSeries& ensemble, const std::vector<std::vector<double>>& truth,
            double lo_pct, double hi_pct) {
    ensemble.validate();
    if (truth.size() != ensemble.size()) throw ShapeError("picp: truth length mismatch");
    std::size_t covered = 0;
    std::size_t total = 0;
    std::vector<std::pair<double, double>> vw(ensemble.n);
    for (std::size_t t = 0; t < ensemble.size(); ++t) {
        if (truth[t].size() != ensemble.d) throw ShapeError("picp: truth dim mismatch");
        for (std::size_t j = 0; j < ensemble.d; ++j) {
            for (std::size_t i = 0; i < ensemble.n; ++i)
                vw[i] = {ensemble.steps[t][i * ensemble.d + j], ensemble.weight(t, i)};
            const double lo = weighted_percentile(vw, lo_pct);
            const double hi = weighted_percentile(vw, hi_pct);
            if (truth[t][j] >= lo && truth[t][j] <= hi) ++covered;
            ++total;
        }
    }
    return static_cast<double>(covered) / static_cast<double>(total);
}

double nll_gaussian(const EnsembleSeries& ensemble,
                    const std::vector<std::vector<double>>& reference) {
    ensemble.validate();
    if (ensemble.n < 5) throw ShapeError("nll_gaussian: ensemble needs at least 5 members");
    if (reference.size() != ensemble.size()) throw ShapeError("nll_gaussian: length mismatch");
    double total = 0.0;
    for (std::size_t t = 0; t < ensemble.size(); ++t) {
        if (reference[t].size() != ensemble.d) throw ShapeError("nll_gaussian: dim mismatch");
        double step_nll = 0.0;
        for (std::size_t j = 0; j < ensemble.d; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < ensemble.n; ++i)
                mean += ensemble.weight(t, i) * ensemble.steps[t][i * ensemble.d + j];
            double var = 0.0;
            for (std::size_t i = 0; i < ensemble.n; ++i) {
                const double d = ensemble.steps[t][i * ensemble.d + j] - mean;
                var += ensemble.weight(t, i) * d * d;
            }
            const double sd = std::max(std::sqrt(var), 1e-6);
            const double r = reference[t][j] - mean;
            step_nll += 0.5 * std::log(2.0 * M_PI * sd * sd) + r * r / (2.0 * sd * sd);
        }
        total += step_nll;
    }
    return total / static_cast<double>(ensemble.size());
}

double wasserstein1_1d(std::vector<double> a, std::vector<double> b) {
    if (a.empty() || b.empty()) throw ShapeError("wasserstein1_1d: empty sample set");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    if (a.size() == b.size()) {
        double acc = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
        return acc / static_cast<double>(a.size());
    }
    // integral of |F_a(x) - F_b(x)| over the merged support
    std::vector<double> all;
    all.reserve(a.size() + b.size());
    all.insert(all.end(), a.begin(), a.end());
    all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    double w1 = 0.0;
    std::size_t ia = 0, ib = 0;
    for (std::size_t k = 0; k + 1 < all.size(); ++k) {
        while (ia < a.size() && a[ia] <= all[k]) ++ia;
        while (ib < b.size() && b[ib] <= all[k]) ++ib;
        const double fa = static_cast<double>(ia) / static_cast<double>(a.size());
        const double fb = static_cast<double>(ib) / static_cast<double>(b.size());
        w1 += std::abs(fa - fb) * (all[k + 1] - all[k]);
    }
    return w1;
}

std::vector<double> windowed_rrmse(const std::vector<std::vector<double>>& estimate,
                                   const std::vector<std::vector<double>>& truth,
                                   std::size_t window) {
    if (window < 1) throw ShapeError("windowed_rrmse: window must be >= 1");
    if (estimate.size() != truth.size() || estimate.empty())
        throw ShapeError("windowed_rrmse: series length mismatch");
    if (window > estimate.size())
        throw ShapeError("windowed_rrmse: window longer than series");
    std::vector<double> out;
    for (std::size_t start = 0; start + window <= estimate.size(); ++start) {
        std::vector<double> e, t;
        for (std::size_t k = start; k < start + window; ++k) {
            e.insert(e.end(), estimate[k].begin(), estimate[k].end());
            t.insert(t.end(), truth[k].begin(), truth[k].end());
        }
        out.push_back(rrmse(e, t));
    }
    return out;
}

TestFunction make_test_function(const std::string& name) {
    auto moment = [](int p) {
        return [p](const std::vector<double>& x) {
            double mean = 0.0;
            for (double v : x) mean += v;
            mean /= static_cast<double>(x.size());
            double acc = 0.0;
            for (double v : x) acc += std::pow(v - mean, p);
            return acc / static_cast<double>(x.size());
        };
    };
    if (name == "mean")
        return {name, [](const std::vector<double>& x) {
                    double m = 0.0;
                    for (double v : x) m += v;
                    return m / static_cast<double>(x.size());
                }};
    if (name == "moment2") return {name, moment(2)};
    if (name == "moment3") return {name, moment(3)};
    if (name == "moment4") return {name, moment(4)};
    if (name.rfind("component:", 0) == 0) {
        const std::size_t k = std::stoul(name.substr(10));
        return {name, [k](const std::vector<double>& x) { return x.at(k); }};
    }
    throw ConfigError("unknown test function '" + name + "'");
}

void MetricReport::validate() const {
    auto finite = [](double v, const char* what) {
        if (!std::isfinite(v)) throw std::runtime_error(std::string("metric not finite: ") + what);
    };
    finite(rmse, "rmse");
    finite(rrmse, "rrmse");
    finite(amrmse, "amrmse");
    finite(nll, "nll");
    finite(picp, "picp");
    finite(wasserstein1, "wasserstein1");
    if (picp < 0.0 || picp > 1.0) throw std::runtime_error("picp outside [0, 1]");
    for (double v : windowed_rrmse) finite(v, "windowed_rrmse");
}

nlohmann::json MetricReport::to_json() const {
    return nlohmann::json{{"rmse", rmse},
                          {"rrmse", rrmse},
                          {"amrmse", amrmse},
                          {"nll", nll},
                          {"picp", picp},
                          {"wasserstein1", wasserstein1},
                          {"windowed_rrmse", windowed_rrmse}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
    validate_metric_report_json(j);
    MetricReport r;
    r.rmse = j.at("rmse").get<double>();
    r.rrmse = j.at("rrmse").get<double>();
    r.amrmse = j.at("amrmse").get<double>();
    r.nll = j.at("nll").get<double>();
    r.picp = j.at("picp").get<double>();
    r.wasserstein1 = j.at("wasserstein1").get<double>();
    r.windowed_rrmse = j.at("windowed_rrmse").get<std::vector<double>>();
    return r;
}

void validate_metric_report_json(const nlohmann::json& j) {
    if (!j.is_object()) throw std::runtime_error("metric report: not a JSON object");
    for (const char* key : {"rmse", "rrmse", "amrmse", "nll", "picp", "wasserstein1"})
        if (!j.contains(key) || !j.at(key).is_number())
            throw std::runtime_error(std::string("metric report: missing numeric field '") + key +
                                     "'");
    if (!j.contains("windowed_rrmse") || !j.at("windowed_rrmse").is_array())
        throw std::runtime_error("metric report: missing array field 'windowed_rrmse'");
    for (const auto& v : j.at("windowed_rrmse"))
        if (!v.is_number()) throw std::runtime_error("metric report: windowed_rrmse entries");
}

}  // namespace dlspf::metrics
