#pragma once

#include <cmath>
#include <vector>

#include "hiren/nn/graph.hpp"

namespace hiren::nn {

// Plain Adam. State is kept per parameter in registration order, so the
// same parameter list always yields the same trajectory.
template <typename T>
class Adam {
public:
    using ParamListT = std::vector<Parameter<T>*>;

    explicit Adam(ParamListT params, T lr, T beta1 = T(0.9), T beta2 = T(0.999), T eps = T(1e-8))
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.reserve(params_.size());
        v_.reserve(params_.size());
        for (Parameter<T>* p : params_) {
            m_.emplace_back(p->value.shape());
            v_.emplace_back(p->value.shape());
        }
    }

    void zero_grad() {
        for (Parameter<T>* p : params_) p->zero_grad();
    }

    void step() {
        ++t_;
        T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1_), t_));
        T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2_), t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            Parameter<T>& p = *params_[i];
            if (p.grad.size() != p.value.size()) continue;  // never touched
            Tensor<T>& m = m_[i];
            Tensor<T>& v = v_[i];
            for (int64_t j = 0; j < p.value.size(); ++j) {
                T g = p.grad[j];
                m[j] = beta1_ * m[j] + (T(1) - beta1_) * g;
                v[j] = beta2_ * v[j] + (T(1) - beta2_) * g * g;
                T mh = m[j] / bc1;
                T vh = v[j] / bc2;
                p.value[j] -= lr_ * mh / (std::sqrt(vh) + eps_);
            }
        }
    }

    void set_lr(T lr) { lr_ = lr; }
    T lr() const { return lr_; }
    int step_count() const { return t_; }

private:
    ParamListT params_;
    T lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::vector<Tensor<T>> m_, v_;
};

}  // namespace hiren::nn
