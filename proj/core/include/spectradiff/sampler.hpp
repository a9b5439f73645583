#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "spectradiff/denoiser.hpp"
#include "spectradiff/rng.hpp"

namespace spectradiff {

struct SampleRequest {
    int class_id = 0;
    int count = 1;
    std::uint64_t seed = 0;
    bool clamp = true;
    /// Index of the first chain. Chain i draws from Rng(derive_seed(seed, i)),
    /// so count = 2k equals two count = k requests at offsets 0 and k.
    std::uint64_t chain_offset = 0;
};

/// One reverse step from given network outputs. Row r uses rngs[r].
///
/// x0_hat = predict_x0_from_eps(xt, eps_hat) (clamped when `clamp`), the mean
/// is the posterior mean given x0_hat, the variance is the v-interpolated
/// learned variance; noise is added only for t > 1.
Matrix reverse_step(const Matrix& xt, int t, const Matrix& eps_hat, const Matrix& v,
                    const NoiseSchedule& sched, std::span<Rng> rngs, bool clamp = true);

/// Network evaluation followed by reverse_step.
Matrix p_sample_step(const Matrix& xt, int t, std::span<const int> y, const Denoiser& model,
                     const NoiseSchedule& sched, std::span<Rng> rngs, bool clamp = true);

/// T-step ancestral sampling from standard normal noise. Output is in the
/// model range [-1, 1] when clamping is on. `threads` > 1 splits chains
/// across worker threads; results are identical for any thread count.
Matrix sample(const SampleRequest& req, const Denoiser& model, const NoiseSchedule& sched,
              int threads = 1);

}  // namespace spectradiff
