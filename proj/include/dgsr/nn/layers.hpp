#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "dgsr/nn/ops.hpp"

namespace dgsr::nn {

template <typename T>
Tensor<T> randn(Shape shape, double stddev, std::mt19937_64& rng) {
    Tensor<T> t(std::move(shape));
    std::normal_distribution<double> dist(0.0, stddev);
    for (auto& v : t.data) v = static_cast<T>(dist(rng));
    return t;
}

struct ConvSpec {
    int in = 0;
    int out = 0;
    int kernel = 3;
    int stride = 1;
    int pad = 1;
};

// A convolution whose weight is stored as the [out, in*k*k] kernel matrix.
template <typename T>
struct Conv2d {
    std::string name;
    ConvSpec spec;
    Var<T> weight;
    Var<T> bias;

    Conv2d() = default;
    Conv2d(std::string n, ConvSpec s, std::mt19937_64& rng, double gain = std::sqrt(2.0))
        : name(std::move(n)), spec(s) {
        const int fan_in = spec.in * spec.kernel * spec.kernel;
        weight = parameter(randn<T>({spec.out, fan_in}, gain / std::sqrt(static_cast<double>(fan_in)), rng));
        bias = parameter(Tensor<T>({spec.out}));
    }

    int rows() const { return spec.out; }
    int cols() const { return spec.in * spec.kernel * spec.kernel; }

    Var<T> operator()(const Var<T>& x) const { return apply(x, weight); }
    Var<T> apply(const Var<T>& x, const Var<T>& w) const {
        return conv2d(x, w, bias, spec.kernel, spec.stride, spec.pad);
    }
};

template <typename T>
struct Linear {
    std::string name;
    Var<T> weight;
    Var<T> bias;

    Linear() = default;
    Linear(std::string n, int in, int out, std::mt19937_64& rng, double gain = 1.0) : name(std::move(n)) {
        weight = parameter(randn<T>({out, in}, gain / std::sqrt(static_cast<double>(in)), rng));
        bias = parameter(Tensor<T>({out}));
    }

    int in_features() const { return weight->value.dim(1); }
    int out_features() const { return weight->value.dim(0); }
    Var<T> operator()(const Var<T>& x) const { return linear(x, weight, bias); }
};

// Named handle used for checkpointing and optimizer bookkeeping.
template <typename T>
struct NamedParam {
    std::string name;
    Var<T> var;
};

template <typename T>
void set_trainable(const std::vector<NamedParam<T>>& params, bool trainable) {
    for (const auto& p : params) {
        p.var->requires_grad = trainable;
        p.var->clear_grad();
    }
}

template <typename T>
std::vector<Var<T>> vars_of(const std::vector<NamedParam<T>>& params) {
    std::vector<Var<T>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.var);
    return out;
}

template <typename T>
std::size_t count_values(const std::vector<NamedParam<T>>& params) {
    std::size_t n = 0;
    for (const auto& p : params) n += p.var->value.size();
    return n;
}

template <typename T>
std::vector<Tensor<T>> snapshot(const std::vector<NamedParam<T>>& params) {
    std::vector<Tensor<T>> out;
    out.reserve(params.size());
    for (const auto& p : params) out.push_back(p.var->value);
    return out;
}

} // namespace dgsr::nn
