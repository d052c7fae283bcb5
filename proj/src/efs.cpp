#include "skipgraph/efs.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace skipgraph {

template <Real T>
std::vector<EntropyScores> channel_entropy(const Tensor<T>& f) {
    if (f.rank() < 2) throw DimensionError("channel_entropy: expected [B, C, ...], got " + shape_str(f.shape()));
    const std::size_t B = f.shape()[0], C = f.shape()[1];
    const std::size_t S = f.numel() / (B * C);
    auto fv = f.data();
    std::vector<EntropyScores> out(B);
    for (std::size_t b = 0; b < B; ++b) {
        out[b].scores.resize(C);
        for (std::size_t c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::size_t s = 0; s < S; ++s) {
                const double v = fv[(b * C + c) * S + s];
                const double p = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
                acc += -p * std::log(std::max(p, kEntropyLogFloor));
            }
            out[b].scores[c] = acc / static_cast<double>(S);
        }
    }
    return out;
}

std::vector<std::int32_t> bottom_m_select(std::span<const double> scores, std::size_t M) {
    const std::size_t C = scores.size();
    if (M == 0 || M > C)
        throw ConfigError("bottom-M selection: M must lie in [1, " + std::to_string(C) + "], got " + std::to_string(M));
    std::vector<std::int32_t> idx(C);
    std::iota(idx.begin(), idx.end(), 0);
    std::nth_element(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(M - 1), idx.end(),
                     [&](std::int32_t a, std::int32_t b) {
                         return scores[a] < scores[b] || (scores[a] == scores[b] && a < b);
                     });
    idx.resize(M);
    std::sort(idx.begin(), idx.end());
    return idx;
}

template <Real T>
Tensor<T> efs_spatial_attention(const Tensor<T>& f, std::size_t M, const Tensor<T>& proj_weight,
                                const Tensor<T>& proj_bias, EfsTrace<T>* trace) {
    if (f.rank() != 4) throw DimensionError("EFS: expected [B, C, H, W], got " + shape_str(f.shape()));
    if (proj_weight.rank() != 2 || proj_weight.shape()[0] != 1 || proj_weight.shape()[1] != M)
        throw ConfigError("EFS: projection width " + shape_str(proj_weight.shape()) + " does not match M=" +
                          std::to_string(M));
    const std::size_t B = f.shape()[0];
    std::vector<EntropyScores> entropy;
    auto flat = decide([&] {
        entropy = channel_entropy(f);
        std::vector<std::int32_t> all;
        for (auto& e : entropy) {
            e.bottom_m = bottom_m_select(e.scores, M);
            all.insert(all.end(), e.bottom_m.begin(), e.bottom_m.end());
        }
        return all;
    });
    if (flat.size() != B * M) throw GraphError("EFS: replayed selection has the wrong size");
    std::vector<std::vector<std::int32_t>> index(B);
    for (std::size_t b = 0; b < B; ++b)
        index[b].assign(flat.begin() + static_cast<std::ptrdiff_t>(b * M),
                        flat.begin() + static_cast<std::ptrdiff_t>((b + 1) * M));

    Tensor<T> gate = sigmoid(conv2d_1x1(gather_channels(f, index), proj_weight, proj_bias));
    if (trace) {
        if (entropy.empty()) {
            // Replayed pass: recompute scores for the record.
            entropy = channel_entropy(f);
            for (std::size_t b = 0; b < B; ++b) entropy[b].bottom_m = index[b];
        }
        trace->entropy = std::move(entropy);
        trace->attention = gate;
    }
    return mul(f, gate);
}

template std::vector<EntropyScores> channel_entropy<float>(const Tensor<float>&);
template std::vector<EntropyScores> channel_entropy<double>(const Tensor<double>&);
template Tensor<float> efs_spatial_attention<float>(const Tensor<float>&, std::size_t, const Tensor<float>&,
                                                    const Tensor<float>&, EfsTrace<float>*);
template Tensor<double> efs_spatial_attention<double>(const Tensor<double>&, std::size_t, const Tensor<double>&,
                                                      const Tensor<double>&, EfsTrace<double>*);
template std::vector<EntropyScores> channel_entropy<long double>(const Tensor<long double>&);
template Tensor<long double> efs_spatial_attention<long double>(const Tensor<long double>&, std::size_t,
                                                                const Tensor<long double>&, const Tensor<long double>&,
                                                                EfsTrace<long double>*);

} // namespace skipgraph
