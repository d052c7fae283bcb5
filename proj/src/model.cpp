#include "skipgraph/model.hpp"

#include <algorithm>

namespace skipgraph {

std::string to_string(SkipMode mode) {
    switch (mode) {
    case SkipMode::plain: return "plain";
    case SkipMode::single: return "single";
    case SkipMode::cross: return "cross";
    }
    return "?";
}

SkipMode skip_mode_from_string(const std::string& s) {
    if (s == "plain") return SkipMode::plain;
    if (s == "single") return SkipMode::single;
    if (s == "cross") return SkipMode::cross;
    throw ConfigError("unknown skip mode '" + s + "' (plain | single | cross)");
}

std::size_t ModelConfig::effective_m() const {
    return skip == SkipMode::single ? std::min(select_m, reduced_channels) : select_m;
}

void ModelConfig::validate() const {
    if (input_h == 0 || input_w == 0 || input_h % 32 != 0 || input_w % 32 != 0)
        throw ConfigError("input size must be a positive multiple of 32, got " + std::to_string(input_h) + "x" +
                          std::to_string(input_w));
    for (auto c : encoder_channels)
        if (c == 0) throw ConfigError("encoder channels must be positive");
    if (reduced_channels == 0) throw ConfigError("reduced_channels must be positive");
    if (target_shift < 2 || target_shift > 5)
        throw ConfigError("target_shift must be in {2, 3, 4, 5}, got " + std::to_string(target_shift));
    if (repetitions == 0) throw ConfigError("repetitions must be at least 1");
    if (conv1d_width == 0 || conv1d_width % 2 == 0) throw ConfigError("conv1d_width must be odd");
    if (skip == SkipMode::plain) return;
    if (select_m == 0 || select_m > fused_channels())
        throw ConfigError("select_m must lie in [1, 4*C_r = " + std::to_string(fused_channels()) + "], got " +
                          std::to_string(select_m));
    if (k_neighbors == 0 || dilation == 0) throw ConfigError("k_neighbors and dilation must be positive");
    const std::size_t n = target_h() * target_w();
    if (n <= k_neighbors * dilation)
        throw ConfigError("target grid has " + std::to_string(n) + " nodes, needs more than K*d = " +
                          std::to_string(k_neighbors * dilation));
}

ModelConfig ModelConfig::with_setting(const std::string& setting) const {
    ModelConfig c = *this;
    if (setting == "S0") {
        c.skip = SkipMode::plain;
        c.node_attention = false;
    } else if (setting == "S1") {
        c.skip = SkipMode::single;
        c.node_attention = false;
    } else if (setting == "S2") {
        c.skip = SkipMode::single;
        c.node_attention = true;
    } else if (setting == "S3") {
        c.skip = SkipMode::cross;
        c.node_attention = false;
    } else if (setting == "S4") {
        c.skip = SkipMode::cross;
        c.node_attention = true;
    } else {
        throw ConfigError("unknown ablation setting '" + setting + "' (S0..S4)");
    }
    return c;
}

template <Real T>
Preprocessed<T> preprocess(const FeaturePyramid<T>& pyramid, const std::array<Conv1x1<T>, 4>& reduce,
                           std::size_t target_h, std::size_t target_w) {
    Preprocessed<T> out;
    std::vector<Tensor<T>> parts;
    for (std::size_t i = 0; i < 4; ++i) {
        if (!pyramid.stages[i].defined()) throw DimensionError("preprocess: stage " + std::to_string(i + 1) + " missing");
        out.reduced[i] = reduce[i](pyramid.stages[i]);
        out.resized[i] = bilinear_resize(out.reduced[i], target_h, target_w);
        parts.push_back(out.resized[i]);
    }
    out.fused = concat(parts, 1);
    return out;
}

template <Real T>
std::array<Tensor<T>, 4> postprocess(const Tensor<T>& fused_hat, const std::array<Tensor<T>, 4>& reduced) {
    if (fused_hat.rank() != 4 || fused_hat.shape()[1] % 4 != 0)
        throw DimensionError("postprocess: channel extent must be divisible by 4, got " + shape_str(fused_hat.shape()));
    const std::size_t cr = fused_hat.shape()[1] / 4;
    std::array<Tensor<T>, 4> out;
    for (std::size_t i = 0; i < 4; ++i) {
        const auto& r = reduced[i];
        if (r.rank() != 4 || r.shape()[1] != cr)
            throw DimensionError("postprocess: residual " + std::to_string(i + 1) + " has shape " + shape_str(r.shape()));
        Tensor<T> slab = slice(fused_hat, 1, i * cr, (i + 1) * cr);
        out[i] = add(r, bilinear_resize(slab, r.shape()[2], r.shape()[3]));
    }
    return out;
}

template <Real T>
SkipNet<T>::SkipNet(const ModelConfig& config) : cfg_(config) {
    cfg_.validate();
    Rng rng(stream_seed(cfg_.seed, 0x1417, 0));
    const auto& ch = cfg_.encoder_channels;
    const std::size_t cr = cfg_.reduced_channels;

    stem_[0] = ConvBnRelu<T>(store_, "stem.0", 3, ch[0], 2, rng);
    stem_[1] = ConvBnRelu<T>(store_, "stem.1", ch[0], ch[0], 1, rng);
    std::size_t prev = ch[0];
    for (std::size_t i = 0; i < 4; ++i) {
        const std::string name = "encoder.stage" + std::to_string(i + 1);
        stages_[i][0] = ConvBnRelu<T>(store_, name + ".0", prev, ch[i], 2, rng);
        stages_[i][1] = ConvBnRelu<T>(store_, name + ".1", ch[i], ch[i], 1, rng);
        prev = ch[i];
    }
    for (std::size_t i = 0; i < 4; ++i)
        reduce_[i] = Conv1x1<T>(store_, "reduce." + std::to_string(i + 1), ch[i], cr, true, rng);

    if (cfg_.skip != SkipMode::plain) {
        GnnBlockConfig bc;
        bc.channels = cfg_.block_channels();
        bc.height = cfg_.target_h();
        bc.width = cfg_.target_w();
        bc.k_neighbors = cfg_.k_neighbors;
        bc.dilation = cfg_.dilation;
        bc.conv1d_width = cfg_.conv1d_width;
        bc.node_attention = cfg_.node_attention;
        bc.ffn_hidden = cfg_.ffn_hidden;
        for (std::size_t g = 0; g < cfg_.repetitions; ++g) {
            const std::string name = "skip." + std::to_string(g);
            blocks_.emplace_back(store_, name + ".gnn", bc, rng);
            gates_.emplace_back(store_, name + ".efs", bc.channels, cfg_.effective_m(), rng);
        }
    }

    for (std::size_t i = 0; i < 3; ++i) {
        const std::string name = "decoder." + std::to_string(i + 1);
        decoders_[i][0] = ConvBnRelu<T>(store_, name + ".0", 2 * cr, cr, 1, rng);
        decoders_[i][1] = ConvBnRelu<T>(store_, name + ".1", cr, cr, 1, rng);
    }
    for (std::size_t i = 0; i < 4; ++i) {
        region_heads_[i] = Conv1x1<T>(store_, "head.region" + std::to_string(i + 1), cr, 1, true, rng);
        boundary_heads_[i] = Conv1x1<T>(store_, "head.boundary" + std::to_string(i + 1), cr, 1, true, rng);
    }
}

template <Real T>
FeaturePyramid<T> SkipNet<T>::encode(const Tensor<T>& image, bool train) {
    if (image.rank() != 4 || image.shape()[1] != 3)
        throw DimensionError("encode: expected [B, 3, H, W], got " + shape_str(image.shape()));
    const std::size_t H = image.shape()[2], W = image.shape()[3];
    if (H % 32 != 0 || W % 32 != 0)
        throw ConfigError("encode: input " + std::to_string(H) + "x" + std::to_string(W) + " is not divisible by 32");
    FeaturePyramid<T> pyr;
    Tensor<T> h = stem_[1](stem_[0](image, train), train);
    for (std::size_t i = 0; i < 4; ++i) {
        h = stages_[i][1](stages_[i][0](h, train), train);
        pyr.stages[i] = h;
    }
    return pyr;
}

template <Real T>
Preprocessed<T> SkipNet<T>::preprocess(const FeaturePyramid<T>& pyramid) const {
    const std::size_t H = pyramid.stages[0].shape()[2] * 4, W = pyramid.stages[0].shape()[3] * 4;
    return skipgraph::preprocess(pyramid, reduce_, H >> cfg_.target_shift, W >> cfg_.target_shift);
}

template <Real T>
Tensor<T> SkipNet<T>::skip_branch(const Tensor<T>& fused, bool train, ForwardTrace<T>* trace) {
    if (cfg_.skip == SkipMode::plain) return fused;
    const std::size_t cr = cfg_.reduced_channels;
    Tensor<T> h = cfg_.skip == SkipMode::single ? slice(fused, 1, 3 * cr, 4 * cr) : fused;
    for (std::size_t g = 0; g < blocks_.size(); ++g) {
        GnnTrace<T>* gt = nullptr;
        EfsTrace<T>* et = nullptr;
        if (trace) {
            gt = &trace->gnn.emplace_back();
            et = &trace->efs.emplace_back();
        }
        h = gates_[g](blocks_[g].forward(h, train, gt), et);
    }
    if (cfg_.skip == SkipMode::single) h = concat<T>({slice(fused, 1, 0, 3 * cr), h}, 1);
    return h;
}

template <Real T>
std::array<Tensor<T>, 4> SkipNet<T>::decode(const std::array<Tensor<T>, 4>& skips, bool train) {
    std::array<Tensor<T>, 4> d;
    d[0] = skips[3];
    for (std::size_t i = 0; i < 3; ++i) {
        const Tensor<T>& skip = skips[2 - i];
        Tensor<T> up = bilinear_resize(d[i], d[i].shape()[2] * 2, d[i].shape()[3] * 2);
        Tensor<T> in = concat<T>({skip, up}, 1);
        d[i + 1] = decoders_[i][1](decoders_[i][0](in, train), train);
    }
    return d;
}

template <Real T>
DeepOutputs<T> SkipNet<T>::heads(const std::array<Tensor<T>, 4>& decoder) const {
    DeepOutputs<T> out;
    const std::size_t H = decoder[3].shape()[2] * 4, W = decoder[3].shape()[3] * 4;
    for (std::size_t i = 0; i < 4; ++i) {
        out.region[i] = bilinear_resize(sigmoid(region_heads_[i](decoder[i])), H, W);
        out.boundary[i] = bilinear_resize(sigmoid(boundary_heads_[i](decoder[i])), H, W);
    }
    return out;
}

template <Real T>
DeepOutputs<T> SkipNet<T>::forward(const Tensor<T>& image, bool train, ForwardTrace<T>* trace) {
    FeaturePyramid<T> pyr = encode(image, train);
    Preprocessed<T> pre = preprocess(pyr);
    Tensor<T> fused_hat = skip_branch(pre.fused, train, trace);
    std::array<Tensor<T>, 4> skips = postprocess(fused_hat, pre.reduced);
    std::array<Tensor<T>, 4> dec = decode(skips, train);
    if (trace) {
        trace->pyramid = pyr;
        trace->pre = pre;
        trace->skip_out = fused_hat;
        trace->skips = skips;
        trace->decoder = dec;
    }
    return heads(dec);
}

template Preprocessed<float> preprocess<float>(const FeaturePyramid<float>&, const std::array<Conv1x1<float>, 4>&,
                                               std::size_t, std::size_t);
template Preprocessed<double> preprocess<double>(const FeaturePyramid<double>&,
                                                 const std::array<Conv1x1<double>, 4>&, std::size_t, std::size_t);
template std::array<Tensor<float>, 4> postprocess<float>(const Tensor<float>&, const std::array<Tensor<float>, 4>&);
template std::array<Tensor<double>, 4> postprocess<double>(const Tensor<double>&,
                                                           const std::array<Tensor<double>, 4>&);
template class SkipNet<float>;
template class SkipNet<double>;
template Preprocessed<long double> preprocess<long double>(const FeaturePyramid<long double>&,
                                                           const std::array<Conv1x1<long double>, 4>&, std::size_t,
                                                           std::size_t);
template std::array<Tensor<long double>, 4> postprocess<long double>(const Tensor<long double>&,
                                                                     const std::array<Tensor<long double>, 4>&);
template class SkipNet<long double>;

} // namespace skipgraph
