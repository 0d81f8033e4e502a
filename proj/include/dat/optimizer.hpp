#pragma once

#include "dat/tensor.hpp"

namespace dat {

// SGD with momentum and optional weight decay.
template <typename T>
class SgdOptimizer {
  public:
    SgdOptimizer(std::vector<Tensor<T>> params, T lr, T momentum = T(0.9), T weight_decay = T(0))
        : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
        velocity_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i)
            velocity_[i].assign(params_[i]->value.size(), T(0));
    }

    void set_lr(T lr) { lr_ = lr; }
    T lr() const { return lr_; }

    void zero_grad() {
        for (auto& p : params_) {
            p->ensure_grad();
            p->zero_grad();
        }
    }

    void step() {
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            p.ensure_grad();
            auto& v = velocity_[i];
            for (size_t j = 0; j < p.value.size(); ++j) {
                T g = p.grad[j] + weight_decay_ * p.value[j];
                v[j] = momentum_ * v[j] + g;
                p.value[j] -= lr_ * v[j];
            }
        }
    }

  private:
    std::vector<Tensor<T>> params_;
    T lr_, momentum_, weight_decay_;
    std::vector<std::vector<T>> velocity_;
};

// Adam, used for discretizer training where plain SGD stalls on the VQ terms.
template <typename T>
class AdamOptimizer {
  public:
    AdamOptimizer(std::vector<Tensor<T>> params, T lr, T beta1 = T(0.9), T beta2 = T(0.999),
                  T eps = T(1e-8))
        : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(params_[i]->value.size(), T(0));
            v_[i].assign(params_[i]->value.size(), T(0));
        }
    }

    void zero_grad() {
        for (auto& p : params_) {
            p->ensure_grad();
            p->zero_grad();
        }
    }

    void step() {
        ++t_;
        const T bc1 = T(1) - std::pow(beta1_, T(t_));
        const T bc2 = T(1) - std::pow(beta2_, T(t_));
        for (size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            p.ensure_grad();
            for (size_t j = 0; j < p.value.size(); ++j) {
                const T g = p.grad[j];
                m_[i][j] = beta1_ * m_[i][j] + (T(1) - beta1_) * g;
                v_[i][j] = beta2_ * v_[i][j] + (T(1) - beta2_) * g * g;
                p.value[j] -= lr_ * (m_[i][j] / bc1) / (std::sqrt(v_[i][j] / bc2) + eps_);
            }
        }
    }

  private:
    std::vector<Tensor<T>> params_;
    T lr_, beta1_, beta2_, eps_;
    long t_ = 0;
    std::vector<std::vector<T>> m_, v_;
};

}  // namespace dat
