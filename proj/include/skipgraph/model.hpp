#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "skipgraph/efs.hpp"
#include "skipgraph/patchgraph.hpp"

namespace skipgraph {

/// How the skip connection between encoder and decoder is built.
///  - plain:  f-hat_c = f_c, no graph block and no entropy gate (setting S0)
///  - single: the graph block and gate run on the stage-4 slab only (S1, S2)
///  - cross:  they run on the full concatenated cross-scale map (S3, S4)
enum class SkipMode { plain, single, cross };

std::string to_string(SkipMode mode);
SkipMode skip_mode_from_string(const std::string& s);

struct ModelConfig {
    std::size_t input_h = 64;
    std::size_t input_w = 64;
    std::array<std::size_t, 4> encoder_channels{16, 32, 64, 128};
    std::size_t reduced_channels = 64; // C_r
    std::size_t target_shift = 3;      // (H_t, W_t) = (H, W) / 2^s
    std::size_t k_neighbors = 11;
    std::size_t dilation = 1;
    std::size_t conv1d_width = 3;
    std::size_t select_m = 64;
    std::size_t repetitions = 1; // G
    std::size_t ffn_hidden = 0;  // 0 = block width
    SkipMode skip = SkipMode::cross;
    bool node_attention = true;
    std::uint64_t seed = 1;

    std::size_t target_h() const { return input_h >> target_shift; }
    std::size_t target_w() const { return input_w >> target_shift; }
    std::size_t fused_channels() const { return 4 * reduced_channels; }
    /// Width of the tensor the graph block sees (4 C_r, or C_r single-scale).
    std::size_t block_channels() const { return skip == SkipMode::single ? reduced_channels : fused_channels(); }
    /// Bottom-M count actually used: capped at the block width in single mode.
    std::size_t effective_m() const;

    /// Throws ConfigError on any violated constraint.
    void validate() const;

    /// Applies ablation setting S0..S4 on top of this config.
    ModelConfig with_setting(const std::string& setting) const;
};

template <Real T>
struct FeaturePyramid {
    std::array<Tensor<T>, 4> stages; // f_i: [B, C_i, H / 2^(i+1), W / 2^(i+1)]
};

template <Real T>
struct Preprocessed {
    std::array<Tensor<T>, 4> reduced; // 1x1-conv output at the stage's own resolution
    std::array<Tensor<T>, 4> resized; // f'_i at (H_t, W_t)
    Tensor<T> fused;                  // f_c = [f'_1, f'_2, f'_3, f'_4]
};

template <Real T>
struct DeepOutputs {
    std::array<Tensor<T>, 4> region;   // R_i, [B, 1, H, W]
    std::array<Tensor<T>, 4> boundary; // B_i, [B, 1, H, W]
};

template <Real T>
struct ForwardTrace {
    FeaturePyramid<T> pyramid;
    Preprocessed<T> pre;
    Tensor<T> skip_out; // f-hat_c
    std::vector<GnnTrace<T>> gnn;
    std::vector<EfsTrace<T>> efs;
    std::array<Tensor<T>, 4> skips;   // f-hat^G_i
    std::array<Tensor<T>, 4> decoder; // D_i
};

/// Resizes each 1x1-reduced stage map to the target grid and concatenates
/// them in stage order. A stage already at the target size is not resampled.
template <Real T>
Preprocessed<T> preprocess(const FeaturePyramid<T>& pyramid, const std::array<Conv1x1<T>, 4>& reduce,
                           std::size_t target_h, std::size_t target_w);

/// Splits f-hat_c into four equal channel slabs, resizes slab i to the
/// resolution of reduced[i], and adds reduced[i] back as a residual.
template <Real T>
std::array<Tensor<T>, 4> postprocess(const Tensor<T>& fused_hat, const std::array<Tensor<T>, 4>& reduced);

template <Real T>
class SkipNet {
public:
    explicit SkipNet(const ModelConfig& config);

    SkipNet(const SkipNet&) = delete;
    SkipNet& operator=(const SkipNet&) = delete;
    SkipNet(SkipNet&&) = default;

    const ModelConfig& config() const { return cfg_; }
    ParameterStore<T>& store() { return store_; }
    const ParameterStore<T>& store() const { return store_; }

    FeaturePyramid<T> encode(const Tensor<T>& image, bool train);
    Preprocessed<T> preprocess(const FeaturePyramid<T>& pyramid) const;
    /// The graph block and entropy gate, G times; identity in plain mode.
    Tensor<T> skip_branch(const Tensor<T>& fused, bool train, ForwardTrace<T>* trace = nullptr);
    std::array<Tensor<T>, 4> decode(const std::array<Tensor<T>, 4>& skips, bool train);
    DeepOutputs<T> heads(const std::array<Tensor<T>, 4>& decoder) const;

    DeepOutputs<T> forward(const Tensor<T>& image, bool train, ForwardTrace<T>* trace = nullptr);

private:
    ModelConfig cfg_;
    ParameterStore<T> store_;
    std::array<ConvBnRelu<T>, 2> stem_;
    std::array<std::array<ConvBnRelu<T>, 2>, 4> stages_;
    std::array<Conv1x1<T>, 4> reduce_;
    std::vector<GnnBlock<T>> blocks_;
    std::vector<EfsAttention<T>> gates_;
    std::array<std::array<ConvBnRelu<T>, 2>, 3> decoders_;
    std::array<Conv1x1<T>, 4> region_heads_;
    std::array<Conv1x1<T>, 4> boundary_heads_;
};

extern template class SkipNet<float>;
extern template class SkipNet<double>;
extern template class SkipNet<long double>;

} // namespace skipgraph
