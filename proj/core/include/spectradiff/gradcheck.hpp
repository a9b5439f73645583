#pragma once

#include <cstdint>
#include <string>

#include "spectradiff/denoiser.hpp"
#include "spectradiff/schedule.hpp"

namespace spectradiff {

struct GradcheckReport {
    double max_rel_error = 0.0;
    std::string worst_param;
    std::size_t checked = 0;
};

/// Central-difference check of the hybrid loss against backward, over every
/// parameter element of a denoiser whose weights (zero-initialized ones
/// included) are drawn at random. Relative error is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
GradcheckReport gradcheck_denoiser(const DenoiserConfig& cfg, const ScheduleConfig& sched_cfg,
                                   std::uint64_t seed, double step = 1e-5, double lambda_vlb = 1e-3);

}  // namespace spectradiff
