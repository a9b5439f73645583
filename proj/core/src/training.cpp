#include "spectradiff/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "spectradiff/errors.hpp"
#include "spectradiff/gradcore/ops.hpp"

namespace spectradiff {

LossTerms hybrid_loss_from_outputs(Graph& g, const NoisedBatch& batch, const Tensor& eps_hat,
                                   const Tensor& v, const NoiseSchedule& sched, double lambda_vlb,
                                   const Matrix* fixed_mean) {
    const std::size_t n = batch.xt.rows();
    const std::size_t bands = batch.xt.cols();
    const Shape expected{n, bands};
    if (eps_hat.shape() != expected || v.shape() != expected) {
        throw DimensionError("hybrid_loss: network outputs do not match the batch shape");
    }
    if (n == 0) {
        throw ContractError("hybrid_loss: empty batch");
    }

    // Weighted noise-prediction error.
    std::vector<double> weights(n);
    for (std::size_t r = 0; r < n; ++r) {
        weights[r] = sched.loss_weight(batch.t[r]);
    }
    Tensor diff = ops::sub(g, eps_hat, Tensor::from(batch.eps));
    Tensor per_row = ops::mean_last(g, ops::mul(g, diff, diff));
    Tensor mse = ops::mean(g, ops::mul(g, per_row, Tensor::from({n}, weights)));

    // KL(q || p_theta) with p_theta's mean detached:
    //   0.5 * sum_b [ logvar_p - logvar_q + (var_q + (mu_q - mu_p)^2) * exp(-logvar_p) - 1 ]
    const GaussianMoments q = q_posterior(batch.x0, batch.xt, batch.t, sched);
    const Matrix p_mean = fixed_mean != nullptr
                              ? *fixed_mean
                              : p_moments(batch.xt, eps_hat.to_matrix(), v.to_matrix(), batch.t, sched).mean;
    if (p_mean.rows() != n || p_mean.cols() != bands) {
        throw DimensionError("hybrid_loss: fixed mean does not match the batch shape");
    }
    std::vector<double> log_span(n * bands), log_post(n * bands), numer(n * bands);
    std::vector<double> row_const(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        const int t = batch.t[r];
        const double lp = std::log(q.var(r, 0));
        const double lb = std::log(sched.beta(t));
        for (std::size_t c = 0; c < bands; ++c) {
            const double d = q.mean(r, c) - p_mean(r, c);
            log_span[r * bands + c] = lb - lp;
            log_post[r * bands + c] = lp;
            numer[r * bands + c] = q.var(r, c) + d * d;
            row_const[r] += -lp - 1.0;
        }
    }
    Tensor logvar = ops::add(g, ops::mul(g, v, Tensor::from(expected, std::move(log_span))),
                             Tensor::from(expected, std::move(log_post)));
    Tensor ratio = ops::mul(g, Tensor::from(expected, std::move(numer)),
                            ops::exp(g, ops::scale(g, logvar, -1.0)));
    Tensor kl = ops::add(g, ops::sum_last(g, ops::add(g, logvar, ratio)),
                         Tensor::from({n}, std::move(row_const)));
    Tensor vlb = ops::scale(g, ops::mean(g, kl), 0.5);

    LossTerms out;
    out.mse = mse.item();
    out.vlb = vlb.item();
    out.loss = lambda_vlb == 0.0 ? mse : ops::add(g, mse, ops::scale(g, vlb, lambda_vlb));
    return out;
}

LossTerms hybrid_loss(Graph& g, const NoisedBatch& batch, std::span<const int> y,
                      const Denoiser& model, const NoiseSchedule& sched, double lambda_vlb,
                      const Matrix* fixed_mean) {
    if (model.config().bands != static_cast<int>(batch.xt.cols())) {
        throw ConfigError("hybrid_loss: batch band count differs from the denoiser");
    }
    auto out = model.forward(g, batch.xt, batch.t, y);
    return hybrid_loss_from_outputs(g, batch, out.eps_hat, out.v, sched, lambda_vlb, fixed_mean);
}

void DiffusionTrainConfig::validate() const {
    if (steps < 0 || batch_size < 1) {
        throw ConfigError("train: steps must be non-negative and batch_size positive");
    }
    if (adam.lr < 0.0 || adam.weight_decay < 0.0) {
        throw ConfigError("train: learning rate and weight decay must be non-negative");
    }
    if (lambda_vlb < 0.0) {
        throw ConfigError("train: lambda_vlb must be non-negative");
    }
}

double gradient_norm(const ParamList& params) {
    double total = 0.0;
    for (const auto& [name, t] : params) {
        if (!t.has_grad()) {
            continue;
        }
        for (double g : t.grad()) {
            total += g * g;
        }
    }
    return std::sqrt(total);
}

DiffusionTrainer::DiffusionTrainer(Denoiser& model, const NoiseSchedule& sched,
                                   DiffusionTrainConfig cfg, std::uint64_t seed)
    : model_(model), sched_(sched), cfg_(cfg), optimizer_(model.params()), rng_(seed) {
    cfg_.validate();
}

StepRecord DiffusionTrainer::train_step(const Matrix& x0, std::span<const int> y) {
    if (x0.rows() == 0) {
        throw ContractError("train_step: empty batch");
    }
    std::vector<int> t(x0.rows());
    for (auto& step : t) {
        step = static_cast<int>(rng_.uniform_int(1, sched_.timesteps()));
    }
    Matrix eps(x0.rows(), x0.cols());
    for (auto& e : eps.data()) {
        e = rng_.normal();
    }
    const NoisedBatch batch = q_sample(x0, t, eps, sched_);

    Graph g;
    optimizer_.zero_grad();
    LossTerms terms = hybrid_loss(g, batch, y, model_, sched_, cfg_.lambda_vlb);
    g.backward(terms.loss);
    if (cfg_.grad_clip > 0.0) {
        const double norm = gradient_norm(model_.params());
        if (norm > cfg_.grad_clip) {
            const double factor = cfg_.grad_clip / norm;
            for (auto& [name, p] : model_.params()) {
                for (auto& gv : p.grad()) {
                    gv *= factor;
                }
            }
        }
    }
    if (cfg_.adam.lr > 0.0) {
        optimizer_.step(cfg_.adam);
    }
    ++step_;
    return StepRecord{step_, terms.loss.item(), terms.mse, terms.vlb};
}

std::vector<StepRecord> DiffusionTrainer::fit(const Matrix& x0, std::span<const int> y,
                                              const std::function<void(const StepRecord&)>& on_step) {
    if (x0.rows() == 0 || y.size() != x0.rows()) {
        throw ContractError("fit: need a nonempty dataset with one label per row");
    }
    const std::size_t n = x0.rows();
    const std::size_t take = std::min<std::size_t>(n, static_cast<std::size_t>(cfg_.batch_size));
    std::vector<std::size_t> order(n);
    std::vector<StepRecord> history;
    history.reserve(static_cast<std::size_t>(cfg_.steps));
    for (int s = 0; s < cfg_.steps; ++s) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        if (take < n) {
            // partial Fisher-Yates: first `take` entries are a uniform subset
            for (std::size_t i = 0; i < take; ++i) {
                const auto j = static_cast<std::size_t>(
                    rng_.uniform_int(static_cast<std::int64_t>(i), static_cast<std::int64_t>(n - 1)));
                std::swap(order[i], order[j]);
            }
        }
        std::span<const std::size_t> rows(order.data(), take);
        Matrix xb = x0.select_rows(rows);
        std::vector<int> yb(take);
        for (std::size_t i = 0; i < take; ++i) {
            yb[i] = y[rows[i]];
        }
        history.push_back(train_step(xb, yb));
        if (on_step) {
            on_step(history.back());
        }
    }
    return history;
}

}  // namespace spectradiff
