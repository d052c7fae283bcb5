#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "skipgraph/layers.hpp"

namespace skipgraph {

/// N x K neighbor table over flattened patches. Row i lists the neighbors of
/// node i by ascending (squared distance, index), after the dilation stride.
struct PatchGraph {
    std::size_t n_nodes = 0;
    std::size_t k_neighbors = 0;
    std::size_t dilation = 1;
    std::vector<std::int32_t> neighbors;

    std::span<const std::int32_t> row(std::size_t i) const {
        return std::span<const std::int32_t>(neighbors).subspan(i * k_neighbors, k_neighbors);
    }
};

/// Dilated KNN over the columns of a [C, N] feature matrix (row-major, one
/// row per channel). Candidates j != i are ranked by squared Euclidean
/// distance with index as tie-break; ranks 0, d, 2d, ... are kept until K
/// neighbors are chosen.
PatchGraph build_dilated_knn(std::span<const double> features, std::size_t channels, std::size_t n_nodes,
                             std::size_t k_neighbors, std::size_t dilation);

template <Real T>
PatchGraph build_dilated_knn(const Tensor<T>& features, std::size_t k_neighbors, std::size_t dilation);

/// m[b, c, i] = max over j in row(i) of (x[b, c, j] - x[b, c, i]); the first
/// maximal neighbor in row order receives the gradient.
template <Real T>
Tensor<T> max_relative(const Tensor<T>& x, const std::vector<PatchGraph>& graphs);

/// Max-relative graph convolution: Update([x ; m]) with a learnable 2C -> C
/// 1x1 projection. x is [B, C, N]; one graph per batch item.
template <Real T>
Tensor<T> mrconv(const Tensor<T>& x, const std::vector<PatchGraph>& graphs, const Tensor<T>& update_weight,
                 const Tensor<T>& update_bias);

/// Node attention sigma(conv1d(z_avg) + conv1d(z_max)), shape [B, 1, N], where
/// the statistics pool x [B, C, N] over channels and the kernel is shared.
template <Real T>
Tensor<T> node_attention_map(const Tensor<T>& x, const Tensor<T>& kernel);

/// x scaled per node by its attention weight.
template <Real T>
Tensor<T> node_attention(const Tensor<T>& x, const Tensor<T>& kernel);

struct GnnBlockConfig {
    std::size_t channels = 0;
    std::size_t height = 0; // grid the positional table is laid out on
    std::size_t width = 0;
    std::size_t k_neighbors = 11;
    std::size_t dilation = 1;
    std::size_t conv1d_width = 3;
    bool node_attention = true;
    std::size_t ffn_hidden = 0; // 0 = channels
};

/// Optional capture of intermediate state, for visualization and tests.
template <Real T>
struct GnnTrace {
    std::vector<PatchGraph> graphs;
    Tensor<T> embedded;  // [B, C, N] features the graph was built from
    Tensor<T> attention; // [B, 1, N] node attention, when enabled
    Tensor<T> refined;   // X-bar: post-conv + BN output, before the FFN
};

/// One attentional graph block: 1x1 conv + BN, flatten, positional table,
/// per-item dilated KNN, MRConv, node attention, 1x1 conv + BN, residual FFN.
template <Real T>
class GnnBlock {
public:
    GnnBlock() = default;
    GnnBlock(ParameterStore<T>& store, const std::string& name, const GnnBlockConfig& cfg, Rng& rng);

    Tensor<T> forward(const Tensor<T>& x, bool train, GnnTrace<T>* trace = nullptr);

    const GnnBlockConfig& config() const { return cfg_; }

    GnnBlockConfig cfg_;
    Conv1x1<T> pre_conv;
    BatchNorm<T> pre_bn;
    Tensor<T> pos_embed; // [C, N]
    Conv1x1<T> update;   // 2C -> C
    Tensor<T> attn_kernel; // [1, 1, k]
    Conv1x1<T> post_conv;
    BatchNorm<T> post_bn;
    Conv1x1<T> ffn_in;
    BatchNorm<T> ffn_in_bn;
    Conv1x1<T> ffn_out;
    BatchNorm<T> ffn_out_bn;
};

extern template class GnnBlock<float>;
extern template class GnnBlock<double>;
extern template class GnnBlock<long double>;

} // namespace skipgraph
