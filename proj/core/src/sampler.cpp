#include "spectradiff/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "spectradiff/errors.hpp"

namespace spectradiff {

namespace {

constexpr std::size_t kChunkRows = 128;

void run_chains(const SampleRequest& req, const Denoiser& model, const NoiseSchedule& sched,
                std::size_t first, std::size_t count, Matrix& out) {
    const auto bands = static_cast<std::size_t>(model.config().bands);
    std::vector<Rng> rngs;
    rngs.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        rngs.emplace_back(derive_seed(req.seed, req.chain_offset + first + i));
    }
    Matrix x(count, bands);
    for (std::size_t r = 0; r < count; ++r) {
        for (auto& v : x.row(r)) {
            v = rngs[r].normal();
        }
    }
    const std::vector<int> labels(count, req.class_id);
    for (int t = sched.timesteps(); t >= 1; --t) {
        x = p_sample_step(x, t, labels, model, sched, rngs, req.clamp);
    }
    if (req.clamp) {
        for (auto& v : x.data()) {
            v = std::clamp(v, -1.0, 1.0);
        }
    }
    for (std::size_t r = 0; r < count; ++r) {
        std::copy(x.row(r).begin(), x.row(r).end(), out.row(first + r).begin());
    }
}

}  // namespace

Matrix reverse_step(const Matrix& xt, int t, const Matrix& eps_hat, const Matrix& v,
                    const NoiseSchedule& sched, std::span<Rng> rngs, bool clamp) {
    sched.check_timestep(t);
    if (rngs.size() != xt.rows()) {
        throw DimensionError("reverse_step: one generator per row required");
    }
    const std::vector<int> steps(xt.rows(), t);
    const Matrix x0_hat = predict_x0_from_eps(xt, eps_hat, steps, sched, clamp);
    const GaussianMoments post = q_posterior(x0_hat, xt, steps, sched);
    Matrix out = post.mean;
    if (t == 1) {
        return out;
    }
    for (std::size_t r = 0; r < xt.rows(); ++r) {
        for (std::size_t c = 0; c < xt.cols(); ++c) {
            const double stddev = std::exp(0.5 * learned_log_variance(v(r, c), t, sched));
            out(r, c) += stddev * rngs[r].normal();
        }
    }
    return out;
}

Matrix p_sample_step(const Matrix& xt, int t, std::span<const int> y, const Denoiser& model,
                     const NoiseSchedule& sched, std::span<Rng> rngs, bool clamp) {
    const std::vector<int> steps(xt.rows(), t);
    Graph g(Graph::Mode::inference);
    auto out = model.forward(g, xt, steps, y);
    return reverse_step(xt, t, out.eps_hat.to_matrix(), out.v.to_matrix(), sched, rngs, clamp);
}

Matrix sample(const SampleRequest& req, const Denoiser& model, const NoiseSchedule& sched,
              int threads) {
    if (req.count < 1) {
        throw ConfigError("sample: count must be positive");
    }
    if (req.class_id < 0 || req.class_id >= model.config().num_classes) {
        throw ContractError("sample: class id " + std::to_string(req.class_id) + " outside 0.." +
                            std::to_string(model.config().num_classes - 1));
    }
    const auto count = static_cast<std::size_t>(req.count);
    Matrix out(count, static_cast<std::size_t>(model.config().bands));
    std::vector<std::pair<std::size_t, std::size_t>> chunks;
    for (std::size_t first = 0; first < count; first += kChunkRows) {
        chunks.emplace_back(first, std::min(kChunkRows, count - first));
    }
    const auto workers = static_cast<std::size_t>(std::max(1, threads));
    if (workers == 1 || chunks.size() == 1) {
        for (auto [first, n] : chunks) {
            run_chains(req, model, sched, first, n, out);
        }
        return out;
    }
    {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < std::min(workers, chunks.size()); ++w) {
            pool.emplace_back([&, w]() {
                for (std::size_t c = w; c < chunks.size(); c += workers) {
                    run_chains(req, model, sched, chunks[c].first, chunks[c].second, out);
                }
            });
        }
    }
    return out;
}

}  // namespace spectradiff
