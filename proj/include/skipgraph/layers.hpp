#pragma once

#include <string>

#include "skipgraph/ops.hpp"
#include "skipgraph/parameters.hpp"
#include "skipgraph/random.hpp"

namespace skipgraph {

enum class Init { kaiming_uniform, zeros };

/// Kaiming-uniform bound sqrt(6 / fan_in), drawn in double so f32 and f64
/// models built from one seed start from the same weights up to rounding.
template <Real T>
Tensor<T> make_weight(Shape shape, std::size_t fan_in, Init init, Rng& rng) {
    std::vector<T> v(shape_numel(shape), T(0));
    if (init == Init::kaiming_uniform) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
    }
    return Tensor<T>(std::move(shape), std::move(v));
}

template <Real T>
struct Conv1x1 {
    Tensor<T> weight; // [C_out, C_in]
    Tensor<T> bias;   // [C_out] or undefined

    Conv1x1() = default;
    Conv1x1(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, bool with_bias,
            Rng& rng, Init init = Init::kaiming_uniform) {
        weight = store.add(name + ".weight", make_weight<T>({out, in}, in, init, rng));
        if (with_bias) bias = store.add(name + ".bias", Tensor<T>::zeros({out}));
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d_1x1(x, weight, bias); }
};

template <Real T>
struct Conv2d {
    Tensor<T> weight; // [C_out, C_in, k, k]
    Tensor<T> bias;
    std::size_t stride = 1;
    std::size_t padding = 1;

    Conv2d() = default;
    Conv2d(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out, std::size_t k,
           std::size_t stride_, bool with_bias, Rng& rng)
        : stride(stride_), padding(k / 2) {
        weight = store.add(name + ".weight", make_weight<T>({out, in, k, k}, in * k * k, Init::kaiming_uniform, rng));
        if (with_bias) bias = store.add(name + ".bias", Tensor<T>::zeros({out}));
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, padding); }
};

template <Real T>
struct BatchNorm {
    Tensor<T> gamma;
    Tensor<T> beta;
    BatchNormState<T> state;

    BatchNorm() = default;
    BatchNorm(ParameterStore<T>& store, const std::string& name, std::size_t channels) : state(channels) {
        gamma = store.add(name + ".gamma", Tensor<T>::full({channels}, T(1)));
        beta = store.add(name + ".beta", Tensor<T>::zeros({channels}));
        store.add_buffer(name + ".running_mean", state.running_mean);
        store.add_buffer(name + ".running_var", state.running_var);
    }

    Tensor<T> operator()(const Tensor<T>& x, bool train) { return batch_norm(x, gamma, beta, state, train); }
};

/// 3x3 conv (no bias) + BN + ReLU.
template <Real T>
struct ConvBnRelu {
    Conv2d<T> conv;
    BatchNorm<T> bn;

    ConvBnRelu() = default;
    ConvBnRelu(ParameterStore<T>& store, const std::string& name, std::size_t in, std::size_t out,
               std::size_t stride, Rng& rng)
        : conv(store, name + ".conv", in, out, 3, stride, false, rng), bn(store, name + ".bn", out) {}

    Tensor<T> operator()(const Tensor<T>& x, bool train) { return relu(bn(conv(x), train)); }
};

} // namespace skipgraph
