#include "spectradiff/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "spectradiff/errors.hpp"

namespace spectradiff {

namespace {

void check_batch(const Matrix& a, const Matrix& b, std::span<const int> t, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw DimensionError(std::string(op) + ": operand shapes differ");
    }
    if (t.size() != a.rows()) {
        throw DimensionError(std::string(op) + ": one timestep per row required");
    }
}

}  // namespace

NoisedBatch q_sample(const Matrix& x0, std::span<const int> t, const Matrix& eps,
                     const NoiseSchedule& sched) {
    check_batch(x0, eps, t, "q_sample");
    NoisedBatch out{x0, std::vector<int>(t.begin(), t.end()), eps, Matrix(x0.rows(), x0.cols())};
    for (std::size_t r = 0; r < x0.rows(); ++r) {
        const double ab = sched.alpha_bar(t[r]);
        const double signal = std::sqrt(ab);
        const double noise = std::sqrt(1.0 - ab);
        for (std::size_t c = 0; c < x0.cols(); ++c) {
            out.xt(r, c) = signal * x0(r, c) + noise * eps(r, c);
        }
    }
    return out;
}

GaussianMoments q_posterior(const Matrix& x0, const Matrix& xt, std::span<const int> t,
                            const NoiseSchedule& sched) {
    check_batch(x0, xt, t, "q_posterior");
    GaussianMoments out{Matrix(x0.rows(), x0.cols()), Matrix(x0.rows(), x0.cols())};
    for (std::size_t r = 0; r < x0.rows(); ++r) {
        const int step = t[r];
        const double alpha = sched.alpha(step);
        const double ab = sched.alpha_bar(step);
        const double ab_prev = sched.alpha_bar_prev(step);
        const double coef_xt = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab);
        const double coef_x0 = std::sqrt(ab_prev) * (1.0 - alpha) / (1.0 - ab);
        const double var = std::max(sched.posterior_var(step), kVarianceFloor);
        for (std::size_t c = 0; c < x0.cols(); ++c) {
            out.mean(r, c) = coef_xt * xt(r, c) + coef_x0 * x0(r, c);
            out.var(r, c) = var;
        }
    }
    return out;
}

Matrix predict_x0_from_eps(const Matrix& xt, const Matrix& eps_hat, std::span<const int> t,
                           const NoiseSchedule& sched, bool clamp) {
    check_batch(xt, eps_hat, t, "predict_x0_from_eps");
    Matrix out(xt.rows(), xt.cols());
    for (std::size_t r = 0; r < xt.rows(); ++r) {
        const double ab = sched.alpha_bar(t[r]);
        const double noise = std::sqrt(1.0 - ab);
        const double signal = std::sqrt(ab);
        for (std::size_t c = 0; c < xt.cols(); ++c) {
            double v = (xt(r, c) - noise * eps_hat(r, c)) / signal;
            out(r, c) = clamp ? std::clamp(v, -1.0, 1.0) : v;
        }
    }
    return out;
}

std::vector<double> gaussian_kl(const GaussianMoments& p, const GaussianMoments& q) {
    if (p.mean.rows() != q.mean.rows() || p.mean.cols() != q.mean.cols() ||
        p.var.rows() != p.mean.rows() || q.var.rows() != q.mean.rows() ||
        p.var.cols() != p.mean.cols() || q.var.cols() != q.mean.cols()) {
        throw DimensionError("gaussian_kl: moment shapes differ");
    }
    std::vector<double> out(p.mean.rows(), 0.0);
    for (std::size_t r = 0; r < p.mean.rows(); ++r) {
        double total = 0.0;
        for (std::size_t c = 0; c < p.mean.cols(); ++c) {
            const double vp = p.var(r, c);
            const double vq = q.var(r, c);
            if (!(vp > 0.0) || !(vq > 0.0)) {
                throw ContractError("gaussian_kl: variances must be positive");
            }
            const double d = p.mean(r, c) - q.mean(r, c);
            total += 0.5 * (std::log(vq / vp) + (vp + d * d) / vq - 1.0);
        }
        out[r] = total;
    }
    return out;
}

double learned_log_variance(double v, int t, const NoiseSchedule& sched) {
    const double log_beta = std::log(sched.beta(t));
    const double log_post = std::log(std::max(sched.posterior_var(t), kVarianceFloor));
    return v * log_beta + (1.0 - v) * log_post;
}

GaussianMoments p_moments(const Matrix& xt, const Matrix& eps_hat, const Matrix& v,
                          std::span<const int> t, const NoiseSchedule& sched) {
    check_batch(xt, eps_hat, t, "p_moments");
    check_batch(xt, v, t, "p_moments");
    GaussianMoments out{Matrix(xt.rows(), xt.cols()), Matrix(xt.rows(), xt.cols())};
    for (std::size_t r = 0; r < xt.rows(); ++r) {
        const int step = t[r];
        const double eps_coef = sched.beta(step) / std::sqrt(1.0 - sched.alpha_bar(step));
        const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha(step));
        for (std::size_t c = 0; c < xt.cols(); ++c) {
            out.mean(r, c) = (xt(r, c) - eps_coef * eps_hat(r, c)) * inv_sqrt_alpha;
            out.var(r, c) = std::exp(learned_log_variance(v(r, c), step, sched));
        }
    }
    return out;
}

}  // namespace spectradiff
