#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "spectradiff/gradcore/tensor.hpp"

namespace spectradiff {

/// Named learnable tensors of one model, in a fixed order.
using ParamList = std::vector<std::pair<std::string, Tensor>>;

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// Adam with decoupled weight decay (AdamW).
class Adam {
public:
    explicit Adam(const ParamList& params);

    /// One update from the current gradients. Throws ConfigError for lr <= 0.
    void step(const AdamConfig& cfg);
    void zero_grad();

    std::int64_t steps() const noexcept { return step_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    std::int64_t step_ = 0;
};

}  // namespace spectradiff
