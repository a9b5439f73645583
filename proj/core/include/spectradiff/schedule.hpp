#pragma once

#include <span>
#include <string>
#include <vector>

namespace spectradiff {

/// How raw SNR loss weights are rescaled.
enum class WeightNorm { mean, max, none };

WeightNorm parse_weight_norm(const std::string& name);
std::string to_string(WeightNorm norm);

struct ScheduleConfig {
    int timesteps = 1000;
    double s = 0.008;       ///< offset keeping beta_1 away from zero
    double delta = 1.2;     ///< exponent of the cosine
    double gamma = 2.0;     ///< SNR loss-weight constant
    double clip_max = 0.999;
    WeightNorm weight_norm = WeightNorm::mean;

    /// Throws ConfigError on an invalid field.
    void validate() const;
};

/// Cosine variance schedule with exponent delta and every per-timestep
/// constant derived from it:
///
///   f(t)       = cos(((t/T + s) / (1 + s)) * pi/2)^delta
///   alpha_bar  = f(t) / f(0)
///   beta       = min(1 - alpha_bar(t) / alpha_bar(t-1), clip_max)
///   alpha      = 1 - beta
///   snr        = alpha_bar / (1 - alpha_bar)
///   post. var  = beta * (1 - alpha_bar(t-1)) / (1 - alpha_bar(t))
///
/// Timesteps are 1-based in every accessor (t = 1..T, stored at t-1);
/// alpha_bar_prev(1) is the virtual alpha_bar(0) = 1. Immutable once built.
class NoiseSchedule {
public:
    const ScheduleConfig& config() const noexcept { return cfg_; }
    int timesteps() const noexcept { return cfg_.timesteps; }

    double beta(int t) const { return beta_[index(t)]; }
    double alpha(int t) const { return alpha_[index(t)]; }
    double alpha_bar(int t) const { return alpha_bar_[index(t)]; }
    /// alpha_bar(t-1), equal to 1 at t = 1.
    double alpha_bar_prev(int t) const { return t == 1 ? 1.0 : alpha_bar_[index(t) - 1]; }
    double posterior_var(int t) const { return posterior_var_[index(t)]; }
    double snr(int t) const { return snr_[index(t)]; }
    double loss_weight(int t) const { return loss_weight_[index(t)]; }

    std::span<const double> betas() const noexcept { return beta_; }
    std::span<const double> alphas() const noexcept { return alpha_; }
    std::span<const double> alpha_bars() const noexcept { return alpha_bar_; }
    std::span<const double> posterior_vars() const noexcept { return posterior_var_; }
    std::span<const double> snrs() const noexcept { return snr_; }
    std::span<const double> loss_weights() const noexcept { return loss_weight_; }

    /// Throws ContractError unless 1 <= t <= T.
    void check_timestep(int t) const;

private:
    friend NoiseSchedule build_schedule(const ScheduleConfig& cfg);
    std::size_t index(int t) const {
        check_timestep(t);
        return static_cast<std::size_t>(t - 1);
    }

    ScheduleConfig cfg_;
    std::vector<double> beta_;
    std::vector<double> alpha_;
    std::vector<double> alpha_bar_;
    std::vector<double> posterior_var_;
    std::vector<double> snr_;
    std::vector<double> loss_weight_;
};

NoiseSchedule build_schedule(const ScheduleConfig& cfg);

/// SNR(t) / (SNR(t) * gamma + 1), rescaled per `norm` (mean-norm makes the
/// average weight over t = 1..T equal to 1).
std::vector<double> loss_weights(const NoiseSchedule& sched, double gamma,
                                 WeightNorm norm = WeightNorm::mean);

/// CSV with header t,beta,alpha_bar,snr,posterior_var,loss_weight.
std::string schedule_csv(const NoiseSchedule& sched);

}  // namespace spectradiff
