#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "spectradiff/denoiser.hpp"
#include "spectradiff/diffusion.hpp"
#include "spectradiff/gradcore/adam.hpp"
#include "spectradiff/rng.hpp"

namespace spectradiff {

/// Scalar loss tensor plus its two components as plain values.
struct LossTerms {
    Tensor loss;
    double mse = 0.0;  ///< mean over batch of w(t) * mean-over-bands squared noise error
    double vlb = 0.0;  ///< mean over batch of KL(q(x_{t-1}|x_t,x_0) || p_theta), summed over bands
};

/// Hybrid objective from network outputs:
///   mse + lambda_vlb * vlb
/// The KL term uses the learned variance from `v` but a detached mean, so it
/// trains only the variance path. `fixed_mean`, when given, replaces the
/// detached mean (finite-difference checks hold it constant this way).
LossTerms hybrid_loss_from_outputs(Graph& g, const NoisedBatch& batch, const Tensor& eps_hat,
                                   const Tensor& v, const NoiseSchedule& sched, double lambda_vlb,
                                   const Matrix* fixed_mean = nullptr);

LossTerms hybrid_loss(Graph& g, const NoisedBatch& batch, std::span<const int> y,
                      const Denoiser& model, const NoiseSchedule& sched, double lambda_vlb,
                      const Matrix* fixed_mean = nullptr);

struct DiffusionTrainConfig {
    int steps = 3000;
    int batch_size = 64;
    double lambda_vlb = 1e-3;
    AdamConfig adam{};
    double grad_clip = 1.0;  ///< global gradient-norm clip; <= 0 disables

    void validate() const;
};

struct StepRecord {
    int step = 0;
    double loss = 0.0;
    double mse = 0.0;
    double vlb = 0.0;
};

/// Owns the optimizer state and RNG for one denoiser. Single execution context.
class DiffusionTrainer {
public:
    DiffusionTrainer(Denoiser& model, const NoiseSchedule& sched, DiffusionTrainConfig cfg,
                     std::uint64_t seed);

    /// One step on the given batch: uniform timesteps in 1..T, standard normal
    /// noise, hybrid loss, backward, AdamW. A learning rate of exactly 0 skips
    /// the update.
    StepRecord train_step(const Matrix& x0, std::span<const int> y);

    /// cfg.steps steps; each draws min(batch_size, n) distinct rows.
    std::vector<StepRecord> fit(const Matrix& x0, std::span<const int> y,
                                const std::function<void(const StepRecord&)>& on_step = {});

    int steps_taken() const noexcept { return step_; }

private:
    Denoiser& model_;
    const NoiseSchedule& sched_;
    DiffusionTrainConfig cfg_;
    Adam optimizer_;
    Rng rng_;
    int step_ = 0;
};

/// Global L2 norm of all parameter gradients.
double gradient_norm(const ParamList& params);

}  // namespace spectradiff
