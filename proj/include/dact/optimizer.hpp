// Parameter updates: adaptive moment estimation (the default) and plain
// gradient descent. Non-trainable parameters are never touched.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dact/tensor.hpp"

namespace dact {

enum class UpdateRule { adam, sgd };

struct OptimizerConfig {
    UpdateRule rule = UpdateRule::adam;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

class Optimizer {
public:
    Optimizer() = default;

    Optimizer(OptimizerConfig config, std::vector<Parameter*> params)
        : config_(config), params_(std::move(params)) {
        if (config_.rule == UpdateRule::adam) {
            first_moment_.reserve(params_.size());
            second_moment_.reserve(params_.size());
            for (const Parameter* p : params_) {
                first_moment_.push_back(Tensor::zeros(p->value.shape()));
                second_moment_.push_back(Tensor::zeros(p->value.shape()));
            }
        }
    }

    const OptimizerConfig& config() const { return config_; }

    /// Applies one update to every trainable parameter, then zeroes all
    /// gradients. A non-finite gradient aborts the run.
    void step() {
        for (const Parameter* p : params_) {
            if (p->trainable && !p->grad.all_finite()) {
                throw NumericError("non-finite gradient in parameter '" + p->name + "'");
            }
        }
        ++step_count_;
        for (std::size_t pi = 0; pi < params_.size(); ++pi) {
            Parameter& p = *params_[pi];
            if (!p.trainable) continue;
            switch (config_.rule) {
                case UpdateRule::sgd:
                    for (std::size_t i = 0; i < p.value.size(); ++i) {
                        p.value[i] -= config_.learning_rate * p.grad[i];
                    }
                    break;
                case UpdateRule::adam: {
                    Tensor& m = first_moment_[pi];
                    Tensor& v = second_moment_[pi];
                    const double b1 = config_.beta1;
                    const double b2 = config_.beta2;
                    const double correction1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
                    const double correction2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
                    for (std::size_t i = 0; i < p.value.size(); ++i) {
                        const double g = p.grad[i];
                        m[i] = b1 * m[i] + (1.0 - b1) * g;
                        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                        const double m_hat = m[i] / correction1;
                        const double v_hat = v[i] / correction2;
                        p.value[i] -= config_.learning_rate * m_hat /
                                      (std::sqrt(v_hat) + config_.epsilon);
                    }
                    break;
                }
            }
        }
        for (Parameter* p : params_) p->zero_grad();
    }

private:
    OptimizerConfig config_;
    std::vector<Parameter*> params_;
    std::vector<Tensor> first_moment_;
    std::vector<Tensor> second_moment_;
    std::size_t step_count_ = 0;
};

}  // namespace dact
