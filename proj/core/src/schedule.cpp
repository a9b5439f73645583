#include "spectradiff/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "spectradiff/errors.hpp"
#include "spectradiff/format.hpp"

namespace spectradiff {

WeightNorm parse_weight_norm(const std::string& name) {
    if (name == "mean") {
        return WeightNorm::mean;
    }
    if (name == "max") {
        return WeightNorm::max;
    }
    if (name == "none") {
        return WeightNorm::none;
    }
    throw ConfigError("unknown weight norm '" + name + "' (expected mean, max or none)");
}

std::string to_string(WeightNorm norm) {
    switch (norm) {
        case WeightNorm::mean:
            return "mean";
        case WeightNorm::max:
            return "max";
        case WeightNorm::none:
            return "none";
    }
    return "mean";
}

void ScheduleConfig::validate() const {
    if (timesteps < 1) {
        throw ConfigError("schedule: T must be at least 1");
    }
    if (!(s > 0.0)) {
        throw ConfigError("schedule: s must be positive");
    }
    if (!(delta > 0.0)) {
        throw ConfigError("schedule: delta must be positive");
    }
    if (!(gamma > 0.0)) {
        throw ConfigError("schedule: gamma must be positive");
    }
    if (!(clip_max > 0.0 && clip_max < 1.0)) {
        throw ConfigError("schedule: clip_max must lie in (0, 1)");
    }
}

void NoiseSchedule::check_timestep(int t) const {
    if (t < 1 || t > cfg_.timesteps) {
        throw ContractError("timestep " + std::to_string(t) + " outside 1.." +
                            std::to_string(cfg_.timesteps));
    }
}

NoiseSchedule build_schedule(const ScheduleConfig& cfg) {
    cfg.validate();
    const auto T = static_cast<std::size_t>(cfg.timesteps);
    const double total = static_cast<double>(cfg.timesteps);
    auto f = [&](double t) {
        return std::pow(std::cos(((t / total + cfg.s) / (1.0 + cfg.s)) * std::numbers::pi / 2.0),
                        cfg.delta);
    };
    const double f0 = f(0.0);

    NoiseSchedule out;
    out.cfg_ = cfg;
    out.beta_.resize(T);
    out.alpha_.resize(T);
    out.alpha_bar_.resize(T);
    out.posterior_var_.resize(T);
    out.snr_.resize(T);
    double prev = 1.0;
    for (std::size_t i = 0; i < T; ++i) {
        const double ab = f(static_cast<double>(i + 1)) / f0;
        const double beta = std::min(1.0 - ab / prev, cfg.clip_max);
        out.alpha_bar_[i] = ab;
        out.beta_[i] = beta;
        out.alpha_[i] = 1.0 - beta;
        out.snr_[i] = ab / (1.0 - ab);
        out.posterior_var_[i] = (1.0 - out.alpha_[i]) * (1.0 - prev) / (1.0 - ab);
        prev = ab;
    }
    out.loss_weight_ = loss_weights(out, cfg.gamma, cfg.weight_norm);
    return out;
}

std::vector<double> loss_weights(const NoiseSchedule& sched, double gamma, WeightNorm norm) {
    if (!(gamma > 0.0)) {
        throw ConfigError("loss_weights: gamma must be positive");
    }
    auto snr = sched.snrs();
    std::vector<double> w(snr.size());
    std::transform(snr.begin(), snr.end(), w.begin(),
                   [gamma](double v) { return v / (v * gamma + 1.0); });
    double divisor = 1.0;
    if (norm == WeightNorm::mean) {
        divisor = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
    } else if (norm == WeightNorm::max) {
        divisor = *std::max_element(w.begin(), w.end());
    }
    for (auto& v : w) {
        v /= divisor;
    }
    return w;
}

std::string schedule_csv(const NoiseSchedule& sched) {
    std::string out = "t,beta,alpha_bar,snr,posterior_var,loss_weight\n";
    for (int t = 1; t <= sched.timesteps(); ++t) {
        out += std::to_string(t);
        for (double v : {sched.beta(t), sched.alpha_bar(t), sched.snr(t), sched.posterior_var(t),
                         sched.loss_weight(t)}) {
            out += ',';
            out += format_double(v);
        }
        out += '\n';
    }
    return out;
}

}  // namespace spectradiff
