#include "dlspf/assimilation.hpp"

#include <cmath>

#include "dlspf/errors.hpp"

namespace dlspf::da {

void GaussianNoise::validate() const {
    for (double s : std)
        if (!(s >= 0.0)) throw ConfigError("gaussian noise: std must be >= 0");
}

void GaussianNoise::add_to(std::vector<double>& x, RngStream& rng) const {
    if (std.empty()) return;
    if (std.size() != x.size()) throw ShapeError("gaussian noise: dimension mismatch");
    for (std::size_t i = 0; i < x.size(); ++i)
        if (std[i] > 0.0) x[i] += std[i] * rng.normal();
}

GaussianNoise GaussianNoise::iid(double sigma, std::size_t dim) {
    GaussianNoise n;
    n.std.assign(dim, sigma);
    n.validate();
    return n;
}

void ObservationOperator::validate(std::size_t state_dim) const {
    for (std::size_t idx : indices)
        if (idx >= state_dim)
            throw ShapeError("observation operator: sensor index " + std::to_string(idx) +
                             " out of bounds for state dim " + std::to_string(state_dim));
}

std::vector<double> ObservationOperator::observe(const std::vector<double>& q) const {
    validate(q.size());
    std::vector<double> y(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) y[i] = q[indices[i]];
    return y;
}

ObservationOperator ObservationOperator::from_positions(const std::vector<double>& positions,
                                                        double length, std::size_t grid_size) {
    if (grid_size < 2) throw ConfigError("observation operator: grid_size must be >= 2");
    ObservationOperator h;
    const double dx = length / static_cast<double>(grid_size - 1);
    for (double p : positions) {
        if (p < 0.0 || p > length)
            throw ConfigError("observation operator: sensor position outside domain");
        const auto idx = static_cast<std::size_t>(std::llround(p / dx));
        h.indices.push_back(std::min(idx, grid_size - 1));
    }
    return h;
}

std::vector<double> observe(const std::vector<double>& q, const ObservationOperator& h) {
    return h.observe(q);
}

double gaussian_log_likelihood(const std::vector<double>& residual, double std) {
    if (!(std > 0.0)) throw ConfigError("gaussian_log_likelihood: std must be positive");
    const double inv2var = 1.0 / (2.0 * std * std);
    const double log_norm = -0.5 * std::log(2.0 * M_PI * std * std);
    double ll = 0.0;
    for (double r : residual) ll += log_norm - r * r * inv2var;
    return ll;
}

}  // namespace dlspf::da
