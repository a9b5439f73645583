#include "spectradiff/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "spectradiff/training.hpp"

namespace spectradiff {

GradcheckReport gradcheck_denoiser(const DenoiserConfig& cfg, const ScheduleConfig& sched_cfg,
                                   std::uint64_t seed, double step, double lambda_vlb) {
    const auto sched = build_schedule(sched_cfg);
    Denoiser model(cfg, seed);
    Rng rng(derive_seed(seed, 1));
    for (auto& [name, p] : model.params()) {
        for (auto& v : p.data()) {
            v += rng.normal(0.0, 0.3);
        }
    }
    const std::size_t batch = 3;
    const auto bands = static_cast<std::size_t>(cfg.bands);
    Matrix x0(batch, bands), eps(batch, bands);
    for (auto& v : x0.data()) v = rng.uniform(-1.0, 1.0);
    for (auto& v : eps.data()) v = rng.normal();
    std::vector<int> t(batch), y(batch);
    for (std::size_t i = 0; i < batch; ++i) {
        // t = 1 has a floored posterior variance that makes differences ill-conditioned
        t[i] = static_cast<int>(rng.uniform_int(std::min(2, sched.timesteps()), sched.timesteps()));
        y[i] = static_cast<int>(rng.uniform_int(0, cfg.num_classes - 1));
    }
    const NoisedBatch nb = q_sample(x0, t, eps, sched);

    // The KL term treats the predicted mean as a constant; hold it at its
    // unperturbed value so the differences see the same function.
    const Matrix mean = predict(model, nb.xt, t, y, sched).moments.mean;
    auto loss_value = [&] {
        Graph g(Graph::Mode::inference);
        return hybrid_loss(g, nb, y, model, sched, lambda_vlb, &mean).loss.item();
    };
    {
        Graph g;
        for (auto& [name, p] : model.params()) p.zero_grad();
        g.backward(hybrid_loss(g, nb, y, model, sched, lambda_vlb, &mean).loss);
    }

    GradcheckReport report;
    for (auto& [name, p] : model.params()) {
        auto data = p.data();
        const auto grad = p.grad();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + step;
            const double up = loss_value();
            data[i] = saved - step;
            const double down = loss_value();
            data[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double err = std::abs(grad[i] - numeric) /
                               std::max({std::abs(grad[i]), std::abs(numeric), 1e-6});
            if (err > report.max_rel_error) {
                report.max_rel_error = err;
                report.worst_param = name;
            }
            ++report.checked;
        }
    }
    return report;
}

}  // namespace spectradiff
