#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "skipgraph/layers.hpp"

namespace skipgraph {

/// Per-channel mean pixel entropy (nats) of one feature map, plus the
/// selected Bottom-M channel indices once selection has run.
struct EntropyScores {
    std::vector<double> scores;
    std::vector<std::int32_t> bottom_m;
};

inline constexpr double kEntropyLogFloor = 1e-12;

/// scores[c] = mean over pixels of -p ln max(p, 1e-12) with p = sigmoid(f).
/// Note this is -p ln p, not the two-sided binary entropy. One entry per
/// batch item of f [B, C, ...].
template <Real T>
std::vector<EntropyScores> channel_entropy(const Tensor<T>& f);

/// Indices of the M lowest scores, ties broken by lower channel index,
/// returned in ascending channel order.
std::vector<std::int32_t> bottom_m_select(std::span<const double> scores, std::size_t M);

/// Optional capture of the selection and the attention map.
template <Real T>
struct EfsTrace {
    std::vector<EntropyScores> entropy;
    Tensor<T> attention; // [B, 1, H, W]
};

/// f * sigmoid(conv1x1(f[:, bottom_M])) with the single-channel gate
/// broadcast across every channel of f. `proj_weight` is [1, M]; `proj_bias`
/// is [1] or undefined.
template <Real T>
Tensor<T> efs_spatial_attention(const Tensor<T>& f, std::size_t M, const Tensor<T>& proj_weight,
                                const Tensor<T>& proj_bias, EfsTrace<T>* trace = nullptr);

/// Learnable M -> 1 projection, zero-initialized so the gate starts at 0.5.
template <Real T>
struct EfsAttention {
    std::size_t M = 0;
    Conv1x1<T> proj;

    EfsAttention() = default;
    EfsAttention(ParameterStore<T>& store, const std::string& name, std::size_t channels, std::size_t m, Rng& rng)
        : M(m) {
        if (m == 0 || m > channels)
            throw ConfigError("EFS: M must lie in [1, " + std::to_string(channels) + "], got " + std::to_string(m));
        proj = Conv1x1<T>(store, name + ".proj", m, 1, true, rng, Init::zeros);
    }

    Tensor<T> operator()(const Tensor<T>& f, EfsTrace<T>* trace = nullptr) const {
        return efs_spatial_attention(f, M, proj.weight, proj.bias, trace);
    }
};

} // namespace skipgraph
