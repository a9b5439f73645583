#pragma once

#include <span>
#include <vector>

#include "spectradiff/matrix.hpp"
#include "spectradiff/schedule.hpp"

namespace spectradiff {

/// Lower bound applied to every posterior variance before taking logs.
/// The raw posterior variance at t = 1 is exactly zero.
inline constexpr double kVarianceFloor = 1e-20;

/// Clean batch x0, its timesteps, the injected noise and the noised batch:
/// xt = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps.
struct NoisedBatch {
    Matrix x0;
    std::vector<int> t;
    Matrix eps;
    Matrix xt;
};

/// Diagonal Gaussian per row.
struct GaussianMoments {
    Matrix mean;
    Matrix var;
};

NoisedBatch q_sample(const Matrix& x0, std::span<const int> t, const Matrix& eps,
                     const NoiseSchedule& sched);

/// Moments of q(x_{t-1} | x_t, x_0). The variance is the schedule's posterior
/// variance floored at kVarianceFloor.
GaussianMoments q_posterior(const Matrix& x0, const Matrix& xt, std::span<const int> t,
                            const NoiseSchedule& sched);

/// x0 = (xt - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t), optionally
/// clamped to the model range [-1, 1].
Matrix predict_x0_from_eps(const Matrix& xt, const Matrix& eps_hat, std::span<const int> t,
                           const NoiseSchedule& sched, bool clamp = true);

/// KL(p || q) per row, summed over columns.
std::vector<double> gaussian_kl(const GaussianMoments& p, const GaussianMoments& q);

/// log Sigma_theta = v * log(beta_t) + (1 - v) * log(max(posterior_var_t, floor)).
double learned_log_variance(double v, int t, const NoiseSchedule& sched);

/// Reverse-process moments from network outputs: mean
/// (xt - beta_t / sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_t) and the
/// v-interpolated variance.
GaussianMoments p_moments(const Matrix& xt, const Matrix& eps_hat, const Matrix& v,
                          std::span<const int> t, const NoiseSchedule& sched);

}  // namespace spectradiff
