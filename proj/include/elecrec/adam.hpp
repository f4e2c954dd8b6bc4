#pragma once
// Bias-corrected Adam. Moment buffers are kept per parameter inside the
// optimizer state; gradients are zeroed after each step.

#include <cmath>
#include <span>
#include <unordered_map>
#include <vector>

#include "elecrec/tape.hpp"

namespace elec {

template <class S>
class AdamState {
public:
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;

    AdamState() = default;
    explicit AdamState(double learning_rate) : lr(learning_rate) {}

    long step_count() const { return step_; }

    // One update over `params`. Every listed parameter must carry a gradient
    // from the preceding backward pass.
    void step(std::span<Param<S>* const> params) {
        for (Param<S>* p : params)
            if (!p->grad_populated)
                throw OptimizerError("adam_step: parameter '" + p->name + "' has no populated gradient");
        ++step_;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
        for (Param<S>* p : params) {
            Moments& mom = moments_[p];
            if (mom.m.data.empty()) {
                mom.m = Tensor<S>(p->value.shape);
                mom.v = Tensor<S>(p->value.shape);
            }
            const S b1 = static_cast<S>(beta1), b2 = static_cast<S>(beta2);
            for (std::int64_t i = 0; i < p->value.numel(); ++i) {
                const S g = p->grad.data[i];
                mom.m.data[i] = b1 * mom.m.data[i] + (S(1) - b1) * g;
                mom.v.data[i] = b2 * mom.v.data[i] + (S(1) - b2) * g * g;
                const double mhat = static_cast<double>(mom.m.data[i]) / bc1;
                const double vhat = static_cast<double>(mom.v.data[i]) / bc2;
                p->value.data[i] -= static_cast<S>(lr * mhat / (std::sqrt(vhat) + epsilon));
            }
            p->zero_grad();
        }
    }

private:
    struct Moments {
        Tensor<S> m, v;
    };
    std::unordered_map<const Param<S>*, Moments> moments_;
    long step_ = 0;
};

template <class S>
void adam_step(std::vector<Param<S>*>& params, AdamState<S>& state) {
    state.step(std::span<Param<S>* const>(params.data(), params.size()));
}

}  // namespace elec
