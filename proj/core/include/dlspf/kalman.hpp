#pragma once

#include <cstdint>
#include <vector>

#include "dlspf/rng.hpp"

namespace dlspf::models {

// Row-major dense matrix just big enough for the filtering oracle.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), a(r * c, 0.0) {}
    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
    static Mat eye(std::size_t n);
    static Mat diag(const std::vector<double>& d);
};

Mat mat_mul(const Mat& x, const Mat& y);
Mat mat_add(const Mat& x, const Mat& y);
Mat mat_sub(const Mat& x, const Mat& y);
Mat mat_transpose(const Mat& x);
// Lower-triangular Cholesky factor; throws on non-PSD input.
Mat cholesky(const Mat& x);
// Solves X * S = B given S symmetric positive definite (via Cholesky).
Mat solve_spd_right(const Mat& b, const Mat& s);

// Exact filtering oracle for x_n = A x_{n-1} + w, y_n = H x_n + v.
struct LinearGaussianSSM {
    Mat transition;       // A, d x d
    Mat observation;      // H, o x d
    Mat process_cov;      // d x d
    Mat obs_cov;          // o x o
    std::vector<double> init_mean;
    Mat init_cov;

    void validate() const;
    std::size_t state_dim() const { return transition.rows; }
    std::size_t obs_dim() const { return observation.rows; }
};

struct KalmanResult {
    std::vector<std::vector<double>> means;  // per observation step
    std::vector<Mat> covs;
};

// Gaussian filtering recursion: for each observation, predict then update.
KalmanResult kalman_filter(const LinearGaussianSSM& ssm,
                           const std::vector<std::vector<double>>& observations);

struct SsmTrajectory {
    // states[0] is the sampled initial condition; states[s] is the state at
    // model step s. observations[k] observes states[k+1].
    std::vector<std::vector<double>> states;
    std::vector<std::vector<double>> observations;
};

// Samples a truth trajectory and observations from the model.
SsmTrajectory simulate_ssm(const LinearGaussianSSM& ssm, std::size_t n_steps, std::uint64_t seed,
                           std::uint64_t stream_tag = 0);

}  // namespace dlspf::models
