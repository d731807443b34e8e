#pragma once

#include <vector>

#include "debias/autodiff.hpp"
#include "debias/common.hpp"

namespace debias::ad {

// Classical-momentum SGD. Holds the velocity state for a fixed parameter
// list; step() consumes and clears the accumulated gradients.
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Var> params, double lr, double momentum = 0.0, double weight_decay = 0.0)
        : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
        for (const Var& p : params_) velocity_.emplace_back(p->value.shape);
    }

    void step() {
        for (std::size_t i = 0; i < params_.size(); ++i) {
            Node& p = *params_[i];
            require(p.requires_grad && !p.grad.data.empty(),
                    "sgd_step: parameter has no gradient (missing backward?)");
            Tensor& v = velocity_[i];
            for (std::size_t j = 0; j < p.value.numel(); ++j) {
                double g = p.grad[j] + weight_decay_ * p.value[j];
                v[j] = momentum_ * v[j] + g;
                p.value[j] -= lr_ * v[j];
            }
            p.zero_grad();
        }
    }

    void zero_grad() {
        for (const Var& p : params_) p->zero_grad();
    }

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

private:
    std::vector<Var> params_;
    std::vector<Tensor> velocity_;
    double lr_, momentum_, weight_decay_;
};

inline void sgd_step(std::vector<Var> params, double lr, double momentum = 0.0, double weight_decay = 0.0) {
    SgdOptimizer(std::move(params), lr, momentum, weight_decay).step();
}

}  // namespace debias::ad
