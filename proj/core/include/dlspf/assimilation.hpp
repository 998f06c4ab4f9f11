#pragma once

#include <cstdint>
#include <vector>

#include "dlspf/rng.hpp"

namespace dlspf::da {

// (state, parameters) particle payload in high-fidelity space. The latent
// twin carries z in place of q; both share this layout with `x` holding
// whichever representation the filter runs on.
struct AugmentedState {
    std::vector<double> q;
    std::vector<double> m;
};

struct LatentAugmentedState {
    std::vector<double> z;
    std::vector<double> m;
};

// Zero-mean Gaussian with per-component std (empty = no noise).
struct GaussianNoise {
    std::vector<double> std;

    void validate() const;
    bool empty() const { return std.empty(); }
    void add_to(std::vector<double>& x, RngStream& rng) const;
    // Scalar-std convenience covering the common i.i.d. case.
    static GaussianNoise iid(double sigma, std::size_t dim);
};

// Point-sampling observation operator: selected grid indices, in sensor
// order.
struct ObservationOperator {
    std::vector<std::size_t> indices;

    std::size_t n_obs() const { return indices.size(); }
    void validate(std::size_t state_dim) const;
    std::vector<double> observe(const std::vector<double>& q) const;
    // Maps physical sensor positions on [0, L] to nearest grid nodes of a
    // grid with `grid_size` points (node i at i*L/(grid_size-1)).
    static ObservationOperator from_positions(const std::vector<double>& positions, double length,
                                              std::size_t grid_size);
};

std::vector<double> observe(const std::vector<double>& q, const ObservationOperator& h);

// Sum over components of log N(r_i; 0, std^2).
double gaussian_log_likelihood(const std::vector<double>& residual, double std);

}  // namespace dlspf::da
