#pragma once

// SGD with gradient accumulation and half-cosine learning-rate decay.
// Samples are streamed one at a time; the optimizer steps once per
// `accumulation` samples with the mean of the accumulated gradients.

#include <cmath>
#include <numbers>

#include "ebus3d/tensor.hpp"

namespace ebus3d {

struct CosineSchedule {
    double lr0 = 1e-4;
    std::int64_t total_steps = 1;
    std::int64_t current_step = 0;

    // lr(t) = lr0 * (1 + cos(pi * t / T)) / 2; lr(0)=lr0, lr(T)=0.
    double lr() const {
        const double t = static_cast<double>(std::min(current_step, total_steps));
        const double frac = t / static_cast<double>(total_steps);
        return lr0 * 0.5 * (1.0 + std::cos(std::numbers::pi_v<double> * frac));
    }
    void advance() { ++current_step; }
};

struct SgdConfig {
    CosineSchedule schedule;
    int accumulation = 12;
};

template <typename S>
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Tensor<S>> params, SgdConfig config)
        : params_(std::move(params)), config_(std::move(config)) {
        if (config_.accumulation < 1)
            throw std::invalid_argument("sgd: accumulation must be >= 1");
    }

    // Call once per sample after its backward pass. Steps automatically
    // when the accumulation window fills; returns true when a step ran.
    bool accumulate() {
        ++pending_;
        if (pending_ == config_.accumulation) {
            step();
            return true;
        }
        return false;
    }

    // Epoch-end partial window: step with however many samples are pending.
    bool flush() {
        if (pending_ == 0) return false;
        step();
        return true;
    }

    double current_lr() const { return config_.schedule.lr(); }
    std::int64_t steps_taken() const { return config_.schedule.current_step; }
    int pending() const { return pending_; }
    CosineSchedule& schedule() { return config_.schedule; }
    const SgdConfig& config() const { return config_; }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

private:
    // p <- p - lr(t) * grad / n_accumulated, then grads are zeroed and the
    // schedule advances.
    void step() {
        if (pending_ == 0)
            throw std::logic_error("sgd: step with empty grads (no samples accumulated)");
        const S scale = static_cast<S>(config_.schedule.lr() / static_cast<double>(pending_));
        for (auto& p : params_) {
            if (!p.has_grad()) continue;  // parameter untouched by the graph
            auto& v = p.data();
            const auto& g = p.grad();
            for (std::size_t i = 0; i < v.size(); ++i) v[i] -= scale * g[i];
            p.zero_grad();
        }
        config_.schedule.advance();
        pending_ = 0;
    }

    std::vector<Tensor<S>> params_;
    SgdConfig config_;
    int pending_ = 0;
};

}  // namespace ebus3d
