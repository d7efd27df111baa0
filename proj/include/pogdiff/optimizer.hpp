#pragma once

#include <cmath>
#include <string>

#include "pogdiff/errors.hpp"
#include "pogdiff/tensor.hpp"

namespace pogdiff {

enum class OptimizerMethod { sgd, adam };

struct OptimizerConfig {
    double learning_rate = 1e-3;
    OptimizerMethod method = OptimizerMethod::adam;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Stateful first-order optimizer. Adam moments are keyed by parameter name.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig config = {}) : config_(config) {
        detail::require(config_.learning_rate > 0.0, "optimizer: learning rate must be positive");
        detail::require(config_.beta1 >= 0.0 && config_.beta1 < 1.0 && config_.beta2 >= 0.0 && config_.beta2 < 1.0,
                        "optimizer: betas must lie in [0, 1)");
    }

    /// Applies one update. Every gradient is checked before any parameter is
    /// touched, so a rejected step leaves params and state unchanged.
    void step(ParameterSet& params, const Gradients& grads) {
        for (const auto& [name, p] : params) {
            auto it = grads.find(name);
            if (it == grads.end()) throw ShapeError("optimizer: no gradient for '" + name + "'");
            if (it->second.shape() != p.shape())
                throw ShapeError("optimizer: gradient shape mismatch for '" + name + "'");
            if (!it->second.all_finite()) throw NumericError("optimizer: non-finite gradient for '" + name + "'");
        }
        ++steps_;
        const double lr = config_.learning_rate;
        if (config_.method == OptimizerMethod::sgd) {
            for (auto& [name, p] : params) {
                const Tensor& g = grads.at(name);
                for (std::size_t i = 0; i < p.size(); ++i) p[i] -= lr * g[i];
            }
            return;
        }
        const double b1 = config_.beta1, b2 = config_.beta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
        for (auto& [name, p] : params) {
            const Tensor& g = grads.at(name);
            Tensor& m = moment(first_, name, p);
            Tensor& v = moment(second_, name, p);
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                const double m_hat = m[i] / c1;
                const double v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (std::sqrt(v_hat) + config_.epsilon);
            }
        }
    }

    long steps() const { return steps_; }
    const OptimizerConfig& config() const { return config_; }

private:
    static Tensor& moment(ParameterSet& store, const std::string& name, const Tensor& like) {
        auto it = store.find(name);
        if (it == store.end()) it = store.emplace(name, Tensor::zeros_like(like)).first;
        return it->second;
    }

    OptimizerConfig config_;
    long steps_ = 0;
    ParameterSet first_;
    ParameterSet second_;
};

}  // namespace pogdiff
