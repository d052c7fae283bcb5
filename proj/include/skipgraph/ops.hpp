#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "skipgraph/tensor.hpp"

namespace skipgraph {

// Elementwise with numpy-style broadcasting over trailing-aligned axes.
template <Real T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <Real T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b);

template <Real T> Tensor<T> add_scalar(const Tensor<T>& a, T s);
template <Real T> Tensor<T> mul_scalar(const Tensor<T>& a, T s);

template <Real T> Tensor<T> relu(const Tensor<T>& x);
template <Real T> Tensor<T> sigmoid(const Tensor<T>& x);

/// Sum / mean of every element, as a rank-0 tensor.
template <Real T> Tensor<T> sum(const Tensor<T>& x);
template <Real T> Tensor<T> mean(const Tensor<T>& x);

enum class PoolKind { avg, max };

/// Global pooling along one axis (kept with extent 1). Max routes its
/// gradient to the first maximal element in scan order.
template <Real T> Tensor<T> global_pool(const Tensor<T>& x, std::size_t axis, PoolKind kind);

template <Real T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <Real T> Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);
template <Real T> Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);

/// Per-item channel gather: out[b, m, ...] = x[b, index[b][m], ...].
template <Real T>
Tensor<T> gather_channels(const Tensor<T>& x, const std::vector<std::vector<std::int32_t>>& index);

/// 1x1 convolution over [B, C_in, ...]; trailing axes are treated as pixels.
/// `bias` may be an undefined tensor.
template <Real T>
Tensor<T> conv2d_1x1(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

/// Square-kernel 2D convolution, weight [C_out, C_in, k, k], zero padding.
template <Real T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding);

/// Same-length cross-correlation of [B, 1, L] with an odd-width [1, 1, k]
/// kernel and zero padding (k - 1) / 2.
template <Real T> Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight);

template <Real T>
struct BatchNormState {
    Tensor<T> running_mean;
    Tensor<T> running_var;

    explicit BatchNormState(std::size_t channels = 1)
        : running_mean(Shape{channels}, T(0)), running_var(Shape{channels}, T(1)) {}
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Batch normalization over every axis but 1. Train mode normalizes with the
/// biased batch variance and folds the unbiased one into the running stats.
template <Real T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                     bool train);

/// Bilinear resampling of [B, C, H, W] with half-pixel centers
/// (align-corners = false). Returns `x` itself when the size already matches.
template <Real T> Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w);

} // namespace skipgraph
