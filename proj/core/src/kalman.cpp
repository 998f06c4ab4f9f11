#include "dlspf/kalman.hpp"

#include <cmath>

#include "dlspf/errors.hpp"

namespace dlspf::models {

Mat Mat::eye(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Mat Mat::diag(const std::vector<double>& d) {
    Mat m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
}

Mat mat_mul(const Mat& x, const Mat& y) {
    if (x.cols != y.rows) throw ShapeError("mat_mul: dimension mismatch");
    Mat out(x.rows, y.cols);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t k = 0; k < x.cols; ++k) {
            const double v = x(i, k);
            for (std::size_t j = 0; j < y.cols; ++j) out(i, j) += v * y(k, j);
        }
    return out;
}

Mat mat_add(const Mat& x, const Mat& y) {
    if (x.rows != y.rows || x.cols != y.cols) throw ShapeError("mat_add: shape mismatch");
    Mat out = x;
    for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] += y.a[i];
    return out;
}

Mat mat_sub(const Mat& x, const Mat& y) {
    if (x.rows != y.rows || x.cols != y.cols) throw ShapeError("mat_sub: shape mismatch");
    Mat out = x;
    for (std::size_t i = 0; i < out.a.size(); ++i) out.a[i] -= y.a[i];
    return out;
}

Mat mat_transpose(const Mat& x) {
    Mat out(x.cols, x.rows);
    for (std::size_t i = 0; i < x.rows; ++i)
        for (std::size_t j = 0; j < x.cols; ++j) out(j, i) = x(i, j);
    return out;
}

Mat cholesky(const Mat& x) {
    if (x.rows != x.cols) throw ShapeError("cholesky: matrix must be square");
    const std::size_t n = x.rows;
    Mat l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = x(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0)
                    throw std::runtime_error("cholesky: matrix not positive definite");
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

Mat solve_spd_right(const Mat& b, const Mat& s) {
    // X = B S^{-1}  via  S = L L^T.
    const Mat l = cholesky(s);
    const std::size_t n = s.rows;
    Mat x(b.rows, n);
    std::vector<double> t(n);
    for (std::size_t r = 0; r < b.rows; ++r) {
        // forward solve L t = b_r
        for (std::size_t i = 0; i < n; ++i) {
            double v = b(r, i);
            for (std::size_t k = 0; k < i; ++k) v -= l(i, k) * t[k];
            t[i] = v / l(i, i);
        }
        // back solve L^T x_r = t
        for (std::size_t ii = n; ii-- > 0;) {
            double v = t[ii];
            for (std::size_t k = ii + 1; k < n; ++k) v -= l(k, ii) * x(r, k);
            x(r, ii) = v / l(ii, ii);
        }
    }
    return x;
}

void LinearGaussianSSM::validate() const {
    const std::size_t d = transition.rows;
    const std::size_t o = observation.rows;
    if (transition.cols != d) throw ShapeError("ssm: transition must be square");
    if (observation.cols != d) throw ShapeError("ssm: observation dim mismatch");
    if (process_cov.rows != d || process_cov.cols != d)
        throw ShapeError("ssm: process covariance dim mismatch");
    if (obs_cov.rows != o || obs_cov.cols != o)
        throw ShapeError("ssm: observation covariance dim mismatch");
    if (init_mean.size() != d || init_cov.rows != d || init_cov.cols != d)
        throw ShapeError("ssm: initial moments dim mismatch");
    auto check_sym_psd = [](const Mat& m, const char* what) {
        for (std::size_t i = 0; i < m.rows; ++i) {
            if (m(i, i) < 0.0) throw std::runtime_error(std::string(what) + ": negative diagonal");
            for (std::size_t j = 0; j < i; ++j)
                if (std::abs(m(i, j) - m(j, i)) > 1e-12)
                    throw std::runtime_error(std::string(what) + ": not symmetric");
        }
    };
    check_sym_psd(process_cov, "process_cov");
    check_sym_psd(obs_cov, "obs_cov");
    check_sym_psd(init_cov, "init_cov");
}

KalmanResult kalman_filter(const LinearGaussianSSM& ssm,
                           const std::vector<std::vector<double>>& observations) {
    ssm.validate();
    const std::size_t d = ssm.state_dim();
    const std::size_t o = ssm.obs_dim();
    KalmanResult res;
    Mat mean(d, 1);
    for (std::size_t i = 0; i < d; ++i) mean(i, 0) = ssm.init_mean[i];
    Mat cov = ssm.init_cov;
    const Mat ht = mat_transpose(ssm.observation);
    for (const auto& y : observations) {
        if (y.size() != o) throw ShapeError("kalman_filter: observation dim mismatch");
        // predict
        mean = mat_mul(ssm.transition, mean);
        cov = mat_add(mat_mul(mat_mul(ssm.transition, cov), mat_transpose(ssm.transition)),
                      ssm.process_cov);
        // update
        const Mat ph = mat_mul(cov, ht);                      // d x o
        const Mat s = mat_add(mat_mul(ssm.observation, ph), ssm.obs_cov);  // o x o
        Mat gain;  // K = P H^T S^{-1}, d x o
        try {
            gain = solve_spd_right(ph, s);
        } catch (const std::runtime_error&) {
            throw std::runtime_error("kalman_filter: singular innovation covariance");
        }
        Mat innov(o, 1);
        Mat hm = mat_mul(ssm.observation, mean);
        for (std::size_t i = 0; i < o; ++i) innov(i, 0) = y[i] - hm(i, 0);
        mean = mat_add(mean, mat_mul(gain, innov));
        const Mat kh = mat_mul(gain, ssm.observation);
        cov = mat_mul(mat_sub(Mat::eye(d), kh), cov);

        std::vector<double> m(d);
        for (std::size_t i = 0; i < d; ++i) m[i] = mean(i, 0);
        res.means.push_back(std::move(m));
        res.covs.push_back(cov);
    }
    return res;
}

SsmTrajectory simulate_ssm(const LinearGaussianSSM& ssm, std::size_t n_steps, std::uint64_t seed,
                           std::uint64_t stream_tag) {
    ssm.validate();
    const std::size_t d = ssm.state_dim();
    const std::size_t o = ssm.obs_dim();
    auto chol_or_zero = [](const Mat& m) {
        for (double v : m.a)
            if (v != 0.0) return cholesky(m);
        return Mat(m.rows, m.cols);
    };
    const Mat lq = chol_or_zero(ssm.process_cov);
    const Mat lr = chol_or_zero(ssm.obs_cov);
    const Mat l0 = chol_or_zero(ssm.init_cov);
    RngStream rng(seed, substream_id(stream_tag, 0xC0DE, 0));
    auto draw = [&rng](const Mat& l) {
        std::vector<double> u(l.rows);
        for (double& v : u) v = rng.normal();
        std::vector<double> x(l.rows, 0.0);
        for (std::size_t i = 0; i < l.rows; ++i)
            for (std::size_t k = 0; k <= i; ++k) x[i] += l(i, k) * u[k];
        return x;
    };
    SsmTrajectory out;
    std::vector<double> x = ssm.init_mean;
    {
        const auto n0 = draw(l0);
        for (std::size_t i = 0; i < d; ++i) x[i] += n0[i];
    }
    for (std::size_t s = 0; s < n_steps; ++s) {
        std::vector<double> nx(d, 0.0);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) nx[i] += ssm.transition(i, j) * x[j];
        const auto w = draw(lq);
        for (std::size_t i = 0; i < d; ++i) nx[i] += w[i];
        x = std::move(nx);
        std::vector<double> y(o, 0.0);
        for (std::size_t i = 0; i < o; ++i)
            for (std::size_t j = 0; j < d; ++j) y[i] += ssm.observation(i, j) * x[j];
        const auto v = draw(lr);
        for (std::size_t i = 0; i < o; ++i) y[i] += v[i];
        out.states.push_back(x);
        out.observations.push_back(std::move(y));
    }
    return out;
}

}  // namespace dlspf::models
