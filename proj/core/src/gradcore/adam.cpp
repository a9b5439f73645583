#include "spectradiff/gradcore/adam.hpp"

#include <cmath>

#include "spectradiff/errors.hpp"

namespace spectradiff {

Adam::Adam(const ParamList& params) {
    for (const auto& [name, tensor] : params) {
        params_.push_back(tensor);
        m_.emplace_back(tensor.numel(), 0.0);
        v_.emplace_back(tensor.numel(), 0.0);
    }
}

void Adam::step(const AdamConfig& cfg) {
    if (!(cfg.lr > 0.0)) {
        throw ConfigError("Adam: learning rate must be positive");
    }
    if (cfg.weight_decay < 0.0 || cfg.beta1 < 0.0 || cfg.beta1 >= 1.0 || cfg.beta2 < 0.0 ||
        cfg.beta2 >= 1.0 || cfg.eps <= 0.0) {
        throw ConfigError("Adam: invalid betas, eps or weight decay");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
    for (std::size_t p = 0; p < params_.size(); ++p) {
        auto w = params_[p].data();
        auto g = params_[p].grad();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            w[i] -= cfg.lr * cfg.weight_decay * w[i];
            w[i] -= cfg.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + cfg.eps);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) {
        p.zero_grad();
    }
}

}  // namespace spectradiff
