#pragma once

#include <cstdint>

#include "sglab/nets.hpp"

namespace sglab {

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Adam with bias correction. Moments are created lazily per parameter name,
/// so one optimizer can own any subset of a ParameterSet.
template <typename T>
class Adam {
public:
    explicit Adam(AdamConfig config = {}) : config_(config) {}

    /// Updates every parameter named in `grads`; other parameters are untouched.
    void step(ParameterSet<T>& params, const TensorMap<T>& grads);

    const AdamConfig& config() const noexcept { return config_; }
    std::uint64_t steps() const noexcept { return steps_; }
    const TensorMap<T>& first_moments() const noexcept { return m_; }
    const TensorMap<T>& second_moments() const noexcept { return v_; }

private:
    AdamConfig config_;
    std::uint64_t steps_ = 0;
    TensorMap<T> m_, v_;
};

}  // namespace sglab
