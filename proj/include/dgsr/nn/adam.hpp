#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "dgsr/nn/autograd.hpp"

namespace dgsr::nn {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Cosine decay factor for update `step` of `total`: 1 at the start, 0 at the end.
inline double cosine_decay(long long step, long long total) {
    if (total <= 0) return 1.0;
    const double t = std::clamp(static_cast<double>(step) / static_cast<double>(total), 0.0, 1.0);
    return 0.5 * (1.0 + std::cos(std::numbers::pi * t));
}

// Adaptive-moment optimizer without weight decay. Parameters that received no
// gradient in a step are left untouched.
template <typename T>
class Adam {
public:
    Adam() = default;
    Adam(std::vector<Var<T>> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
        for (const auto& p : params_) {
            m_.emplace_back(p->value.shape);
            v_.emplace_back(p->value.shape);
        }
    }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
        const T b1 = static_cast<T>(opts_.beta1), b2 = static_cast<T>(opts_.beta2);
        const T step_size = static_cast<T>(opts_.lr / bc1);
        const T inv_bc2 = static_cast<T>(1.0 / bc2);
        const T eps = static_cast<T>(opts_.eps);
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = *params_[i];
            if (!p.has_grad) continue;
            auto& m = m_[i].data;
            auto& v = v_[i].data;
            for (std::size_t j = 0; j < m.size(); ++j) {
                const T g = p.grad.data[j];
                m[j] = b1 * m[j] + (T(1) - b1) * g;
                v[j] = b2 * v[j] + (T(1) - b2) * g * g;
                p.value.data[j] -= step_size * m[j] / (std::sqrt(v[j] * inv_bc2) + eps);
            }
        }
    }

    void zero_grad() {
        for (const auto& p : params_) p->clear_grad();
    }

    const std::vector<Var<T>>& params() const { return params_; }
    AdamOptions& options() { return opts_; }
    long long steps() const { return t_; }

    // Raw state access for checkpointing.
    std::vector<Tensor<T>>& first_moments() { return m_; }
    std::vector<Tensor<T>>& second_moments() { return v_; }
    void set_steps(long long t) { t_ = t; }

private:
    std::vector<Var<T>> params_;
    AdamOptions opts_;
    std::vector<Tensor<T>> m_;
    std::vector<Tensor<T>> v_;
    long long t_ = 0;
};

} // namespace dgsr::nn
