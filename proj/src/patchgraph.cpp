#include "skipgraph/patchgraph.hpp"

#include <algorithm>
#include <string>

namespace skipgraph {

using detail::finish;
using detail::grad_sink;

PatchGraph build_dilated_knn(std::span<const double> features, std::size_t channels, std::size_t n_nodes,
                             std::size_t k_neighbors, std::size_t dilation) {
    if (k_neighbors == 0) throw GraphError("dilated KNN: K must be positive");
    if (dilation == 0) throw GraphError("dilated KNN: dilation must be positive");
    if (n_nodes <= k_neighbors * dilation)
        throw GraphError("dilated KNN: need N > K*d, got N=" + std::to_string(n_nodes) +
                         " K=" + std::to_string(k_neighbors) + " d=" + std::to_string(dilation));
    if (features.size() != channels * n_nodes) throw DimensionError("dilated KNN: feature size mismatch");

    PatchGraph g;
    g.n_nodes = n_nodes;
    g.k_neighbors = k_neighbors;
    g.dilation = dilation;
    g.neighbors.resize(n_nodes * k_neighbors);

    const std::size_t need = (k_neighbors - 1) * dilation + 1;
    std::vector<double> dist(n_nodes);
    std::vector<std::pair<double, std::int32_t>> cand;
    cand.reserve(n_nodes);
    for (std::size_t i = 0; i < n_nodes; ++i) {
        std::fill(dist.begin(), dist.end(), 0.0);
        for (std::size_t c = 0; c < channels; ++c) {
            const double* row = features.data() + c * n_nodes;
            const double xi = row[i];
            for (std::size_t j = 0; j < n_nodes; ++j) {
                const double d = row[j] - xi;
                dist[j] += d * d;
            }
        }
        cand.clear();
        for (std::size_t j = 0; j < n_nodes; ++j)
            if (j != i) cand.emplace_back(dist[j], static_cast<std::int32_t>(j));
        std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(need), cand.end());
        for (std::size_t r = 0; r < k_neighbors; ++r) g.neighbors[i * k_neighbors + r] = cand[r * dilation].second;
    }
    return g;
}

template <Real T>
PatchGraph build_dilated_knn(const Tensor<T>& features, std::size_t k_neighbors, std::size_t dilation) {
    if (features.rank() != 2) throw DimensionError("dilated KNN: features must be [C, N]");
    std::vector<double> f(features.data().begin(), features.data().end());
    return build_dilated_knn(f, features.shape()[0], features.shape()[1], k_neighbors, dilation);
}

template <Real T>
Tensor<T> max_relative(const Tensor<T>& x, const std::vector<PatchGraph>& graphs) {
    if (x.rank() != 3) throw DimensionError("max_relative: input must be [B, C, N], got " + shape_str(x.shape()));
    const std::size_t B = x.shape()[0], C = x.shape()[1], N = x.shape()[2];
    if (graphs.size() != B) throw GraphError("max_relative: need one graph per batch item");
    for (const auto& g : graphs) {
        if (g.n_nodes != N) throw GraphError("max_relative: graph built over a different node count");
        if (g.k_neighbors == 0) throw GraphError("max_relative: empty neighbor row");
    }
    auto xv = x.data();
    auto arg = decide([&] {
        std::vector<std::int32_t> a(B * C * N);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t c = 0; c < C; ++c) {
                const T* row = xv.data() + (b * C + c) * N;
                for (std::size_t i = 0; i < N; ++i) {
                    auto nb = graphs[b].row(i);
                    std::int32_t best = nb[0];
                    for (std::size_t r = 1; r < nb.size(); ++r)
                        if (row[nb[r]] > row[best]) best = nb[r];
                    a[(b * C + c) * N + i] = best;
                }
            }
        return a;
    });
    if (arg.size() != B * C * N) throw GraphError("max_relative: replayed selection has the wrong size");
    std::vector<T> out(B * C * N);
    for (std::size_t bc = 0; bc < B * C; ++bc)
        for (std::size_t i = 0; i < N; ++i)
            out[bc * N + i] = xv[bc * N + static_cast<std::size_t>(arg[bc * N + i])] - xv[bc * N + i];
    return finish<T>("max_relative", x.shape(), std::move(out), {&x}, [x, arg = std::move(arg), B, C, N](std::span<const T> g) {
        T* gx = grad_sink(x);
        for (std::size_t bc = 0; bc < B * C; ++bc)
            for (std::size_t i = 0; i < N; ++i) {
                const T v = g[bc * N + i];
                gx[bc * N + static_cast<std::size_t>(arg[bc * N + i])] += v;
                gx[bc * N + i] -= v;
            }
    });
}

template <Real T>
Tensor<T> mrconv(const Tensor<T>& x, const std::vector<PatchGraph>& graphs, const Tensor<T>& update_weight,
                 const Tensor<T>& update_bias) {
    const Tensor<T> m = max_relative(x, graphs);
    return conv2d_1x1(concat<T>({x, m}, 1), update_weight, update_bias);
}

template <Real T>
Tensor<T> node_attention_map(const Tensor<T>& x, const Tensor<T>& kernel) {
    if (x.rank() != 3) throw DimensionError("node_attention: input must be [B, C, N], got " + shape_str(x.shape()));
    const Tensor<T> z_avg = global_pool(x, 1, PoolKind::avg);
    const Tensor<T> z_max = global_pool(x, 1, PoolKind::max);
    return sigmoid(add(conv1d(z_avg, kernel), conv1d(z_max, kernel)));
}

template <Real T>
Tensor<T> node_attention(const Tensor<T>& x, const Tensor<T>& kernel) {
    return mul(x, node_attention_map(x, kernel));
}

template <Real T>
GnnBlock<T>::GnnBlock(ParameterStore<T>& store, const std::string& name, const GnnBlockConfig& cfg, Rng& rng)
    : cfg_(cfg) {
    const std::size_t C = cfg.channels;
    const std::size_t hidden = cfg.ffn_hidden ? cfg.ffn_hidden : C;
    if (C == 0 || cfg.height == 0 || cfg.width == 0) throw ConfigError("GNN block: channels and grid must be positive");
    if (cfg.conv1d_width % 2 == 0) throw ConfigError("GNN block: conv1d width must be odd");
    pre_conv = Conv1x1<T>(store, name + ".pre_conv", C, C, false, rng);
    pre_bn = BatchNorm<T>(store, name + ".pre_bn", C);
    pos_embed = store.add(name + ".pos_embed", Tensor<T>::zeros({C, cfg.height * cfg.width}));
    update = Conv1x1<T>(store, name + ".update", 2 * C, C, true, rng);
    if (cfg.node_attention)
        attn_kernel = store.add(name + ".attn_kernel",
                                make_weight<T>({1, 1, cfg.conv1d_width}, cfg.conv1d_width, Init::kaiming_uniform, rng));
    post_conv = Conv1x1<T>(store, name + ".post_conv", C, C, false, rng);
    post_bn = BatchNorm<T>(store, name + ".post_bn", C);
    ffn_in = Conv1x1<T>(store, name + ".ffn_in", C, hidden, false, rng);
    ffn_in_bn = BatchNorm<T>(store, name + ".ffn_in_bn", hidden);
    ffn_out = Conv1x1<T>(store, name + ".ffn_out", hidden, C, false, rng);
    ffn_out_bn = BatchNorm<T>(store, name + ".ffn_out_bn", C);
}

template <Real T>
Tensor<T> GnnBlock<T>::forward(const Tensor<T>& x, bool train, GnnTrace<T>* trace) {
    if (x.rank() != 4 || x.shape()[1] != cfg_.channels)
        throw DimensionError("GNN block: expected [B, " + std::to_string(cfg_.channels) + ", H, W], got " +
                             shape_str(x.shape()));
    const std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const std::size_t N = H * W;

    Tensor<T> h = reshape(pre_bn(pre_conv(x), train), {B, C, N});
    Tensor<T> pos = pos_embed;
    if (H != cfg_.height || W != cfg_.width)
        pos = reshape(bilinear_resize(reshape(pos_embed, {1, C, cfg_.height, cfg_.width}), H, W), {C, N});
    h = add(h, pos);

    std::vector<PatchGraph> graphs(B);
    auto hv = h.data();
    for (std::size_t b = 0; b < B; ++b) {
        auto table = decide([&] {
            std::vector<double> f(hv.begin() + static_cast<std::ptrdiff_t>(b * C * N),
                                  hv.begin() + static_cast<std::ptrdiff_t>((b + 1) * C * N));
            return build_dilated_knn(f, C, N, cfg_.k_neighbors, cfg_.dilation).neighbors;
        });
        if (table.size() != N * cfg_.k_neighbors) throw GraphError("GNN block: replayed graph has the wrong size");
        graphs[b] = PatchGraph{N, cfg_.k_neighbors, cfg_.dilation, std::move(table)};
    }

    Tensor<T> g = mrconv(h, graphs, update.weight, update.bias);
    if (cfg_.node_attention) {
        Tensor<T> a = node_attention_map(g, attn_kernel);
        if (trace) trace->attention = a;
        g = mul(g, a);
    }
    Tensor<T> xbar = post_bn(post_conv(reshape(g, {B, C, H, W})), train);
    Tensor<T> ffn = ffn_out_bn(ffn_out(relu(ffn_in_bn(ffn_in(xbar), train))), train);
    if (trace) {
        trace->graphs = graphs;
        trace->embedded = h;
        trace->refined = xbar;
    }
    return add(ffn, xbar);
}

template PatchGraph build_dilated_knn<float>(const Tensor<float>&, std::size_t, std::size_t);
template PatchGraph build_dilated_knn<double>(const Tensor<double>&, std::size_t, std::size_t);
template Tensor<float> max_relative<float>(const Tensor<float>&, const std::vector<PatchGraph>&);
template Tensor<double> max_relative<double>(const Tensor<double>&, const std::vector<PatchGraph>&);
template Tensor<float> mrconv<float>(const Tensor<float>&, const std::vector<PatchGraph>&, const Tensor<float>&,
                                     const Tensor<float>&);
template Tensor<double> mrconv<double>(const Tensor<double>&, const std::vector<PatchGraph>&, const Tensor<double>&,
                                       const Tensor<double>&);
template Tensor<float> node_attention_map<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> node_attention_map<double>(const Tensor<double>&, const Tensor<double>&);
template Tensor<float> node_attention<float>(const Tensor<float>&, const Tensor<float>&);
template Tensor<double> node_attention<double>(const Tensor<double>&, const Tensor<double>&);
template class GnnBlock<float>;
template class GnnBlock<double>;
template PatchGraph build_dilated_knn<long double>(const Tensor<long double>&, std::size_t, std::size_t);
template Tensor<long double> max_relative<long double>(const Tensor<long double>&, const std::vector<PatchGraph>&);
template Tensor<long double> mrconv<long double>(const Tensor<long double>&, const std::vector<PatchGraph>&,
                                                 const Tensor<long double>&, const Tensor<long double>&);
template Tensor<long double> node_attention_map<long double>(const Tensor<long double>&, const Tensor<long double>&);
template Tensor<long double> node_attention<long double>(const Tensor<long double>&, const Tensor<long double>&);
template class GnnBlock<long double>;

} // namespace skipgraph
