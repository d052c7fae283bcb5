#include "skipgraph/losses.hpp"

#include <algorithm>
#include <cmath>

namespace skipgraph {

using detail::finish;
using detail::grad_sink;

namespace {

struct Plane {
    std::size_t B, H, W;
};

template <Real T>
Plane plane_of(const Tensor<T>& t, const char* what) {
    if (t.rank() != 4 || t.shape()[1] != 1)
        throw DimensionError(std::string(what) + ": expected [B, 1, H, W], got " + shape_str(t.shape()));
    return {t.shape()[0], t.shape()[2], t.shape()[3]};
}

template <Real T>
void check_binary(const Tensor<T>& t, const char* what) {
    for (T v : t.data())
        if (v != T(0) && v != T(1)) throw ValidationError(std::string(what) + ": mask must be binary");
}

template <Real T>
void check_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(what) + ": shape " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
    if (n == 1) return 0;
    if (i < 0) return static_cast<std::size_t>(-i);
    if (i >= static_cast<std::ptrdiff_t>(n)) return 2 * n - 2 - static_cast<std::size_t>(i);
    return static_cast<std::size_t>(i);
}

template <typename A>
A clamp_prob(A p) {
    return std::clamp(p, A(kProbClamp), A(1) - A(kProbClamp));
}
template <typename A>
bool clamp_passes(A p) {
    return p >= A(kProbClamp) && p <= A(1) - A(kProbClamp);
}

} // namespace

template <Real T>
Tensor<T> boundary_from_mask(const Tensor<T>& mask) {
    const auto [B, H, W] = plane_of(mask, "boundary_from_mask");
    check_binary(mask, "boundary_from_mask");
    static constexpr int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
    static constexpr int ky[3][3] = {{-1, -2, -1}, {0, 0, 0}, {1, 2, 1}};
    auto m = mask.data();
    std::vector<T> out(m.size(), T(0));
    for (std::size_t b = 0; b < B; ++b) {
        const T* src = m.data() + b * H * W;
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                double gx = 0, gy = 0;
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        const std::size_t yy = reflect(static_cast<std::ptrdiff_t>(y) + dy, H);
                        const std::size_t xx = reflect(static_cast<std::ptrdiff_t>(x) + dx, W);
                        const double v = src[yy * W + xx];
                        gx += kx[dy + 1][dx + 1] * v;
                        gy += ky[dy + 1][dx + 1] * v;
                    }
                out[b * H * W + y * W + x] = std::sqrt(gx * gx + gy * gy) > 0 ? T(1) : T(0);
            }
    }
    return Tensor<T>(mask.shape(), std::move(out));
}

template <Real T>
Tensor<T> weight_map(const Tensor<T>& mask) {
    const auto [B, H, W] = plane_of(mask, "weight_map");
    const std::ptrdiff_t r = kWeightWindow / 2;
    auto m = mask.data();
    std::vector<T> out(m.size());
    std::vector<double> integral((H + 1) * (W + 1));
    for (std::size_t b = 0; b < B; ++b) {
        const T* src = m.data() + b * H * W;
        std::fill(integral.begin(), integral.end(), 0.0);
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x)
                integral[(y + 1) * (W + 1) + x + 1] = src[y * W + x] + integral[y * (W + 1) + x + 1] +
                                                      integral[(y + 1) * (W + 1) + x] - integral[y * (W + 1) + x];
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const auto y0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(y) - r));
                const auto x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(x) - r));
                const std::size_t y1 = std::min(H, y + r + 1), x1 = std::min(W, x + r + 1);
                const double s = integral[y1 * (W + 1) + x1] - integral[y0 * (W + 1) + x1] -
                                 integral[y1 * (W + 1) + x0] + integral[y0 * (W + 1) + x0];
                const double avg = s / static_cast<double>((y1 - y0) * (x1 - x0));
                out[b * H * W + y * W + x] = static_cast<T>(1.0 + 5.0 * std::abs(avg - src[y * W + x]));
            }
    }
    return Tensor<T>(mask.shape(), std::move(out));
}

template <Real T>
SupervisionTargets<T> make_targets(const Tensor<T>& mask) {
    check_binary(mask, "make_targets");
    return {mask, boundary_from_mask(mask), weight_map(mask)};
}

template <Real T>
Tensor<T> weighted_bce(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& weight) {
    using A = Accum<T>;
    const auto [B, H, W] = plane_of(pred, "weighted_bce");
    check_same(pred, target, "weighted_bce");
    check_same(pred, weight, "weighted_bce");
    const std::size_t S = H * W;
    auto p = pred.data();
    auto t = target.data();
    auto w = weight.data();
    std::vector<A> wsum(B, 0.0);
    A total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        A num = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            const std::size_t i = b * S + s;
            const A pc = clamp_prob<A>(p[i]);
            num += w[i] * -(t[i] * std::log(pc) + (A(1) - t[i]) * std::log(A(1) - pc));
            wsum[b] += w[i];
        }
        total += num / wsum[b];
    }
    return finish<T>("weighted_bce", Shape{}, {static_cast<T>(total / static_cast<A>(B))}, {&pred},
                     [pred, target, weight, wsum, B, S](std::span<const T> g) {
                         T* gp = grad_sink(pred);
                         auto p = pred.data();
                         auto t = target.data();
                         auto w = weight.data();
                         for (std::size_t b = 0; b < B; ++b) {
                             const A scale = static_cast<A>(g[0]) / (static_cast<A>(B) * wsum[b]);
                             for (std::size_t s = 0; s < S; ++s) {
                                 const std::size_t i = b * S + s;
                                 if (!clamp_passes<A>(p[i])) continue;
                                 const A pv = p[i];
                                 const A d = -t[i] / pv + (A(1) - t[i]) / (A(1) - pv);
                                 gp[i] += static_cast<T>(scale * w[i] * d);
                             }
                         }
                     });
}

template <Real T>
Tensor<T> weighted_iou(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& weight) {
    using A = Accum<T>;
    const auto [B, H, W] = plane_of(pred, "weighted_iou");
    check_same(pred, target, "weighted_iou");
    check_same(pred, weight, "weighted_iou");
    const std::size_t S = H * W;
    auto p = pred.data();
    auto t = target.data();
    auto w = weight.data();
    std::vector<A> inter(B, 0.0), uni(B, 0.0);
    A total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t s = 0; s < S; ++s) {
            const std::size_t i = b * S + s;
            inter[b] += w[i] * p[i] * t[i];
            uni[b] += w[i] * (p[i] + t[i] - p[i] * t[i]);
        }
        total += A(1) - (inter[b] + kIouSmooth) / (uni[b] + kIouSmooth);
    }
    return finish<T>("weighted_iou", Shape{}, {static_cast<T>(total / static_cast<A>(B))}, {&pred},
                     [pred, target, weight, inter, uni, B, S](std::span<const T> g) {
                         T* gp = grad_sink(pred);
                         auto t = target.data();
                         auto w = weight.data();
                         for (std::size_t b = 0; b < B; ++b) {
                             const A n = inter[b] + kIouSmooth, d = uni[b] + kIouSmooth;
                             const A scale = static_cast<A>(g[0]) / static_cast<A>(B);
                             for (std::size_t s = 0; s < S; ++s) {
                                 const std::size_t i = b * S + s;
                                 // d/dp of -(n / d)
                                 const A dn = w[i] * t[i];
                                 const A dd = w[i] * (A(1) - t[i]);
                                 gp[i] += static_cast<T>(scale * -(dn * d - n * dd) / (d * d));
                             }
                         }
                     });
}

template <Real T>
Tensor<T> bce(const Tensor<T>& pred, const Tensor<T>& target) {
    using A = Accum<T>;
    const auto [B, H, W] = plane_of(pred, "bce");
    check_same(pred, target, "bce");
    const std::size_t S = H * W;
    auto p = pred.data();
    auto t = target.data();
    A total = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
        A acc = 0.0;
        for (std::size_t s = 0; s < S; ++s) {
            const std::size_t i = b * S + s;
            const A pc = clamp_prob<A>(p[i]);
            acc += -(t[i] * std::log(pc) + (A(1) - t[i]) * std::log(A(1) - pc));
        }
        total += acc / static_cast<A>(S);
    }
    return finish<T>("bce", Shape{}, {static_cast<T>(total / static_cast<A>(B))}, {&pred}, [pred, target, B, S](std::span<const T> g) {
        T* gp = grad_sink(pred);
        auto p = pred.data();
        auto t = target.data();
        const A scale = static_cast<A>(g[0]) / (static_cast<A>(B) * static_cast<A>(S));
        for (std::size_t i = 0; i < B * S; ++i) {
            if (!clamp_passes<A>(p[i])) continue;
            const A pv = p[i];
            gp[i] += static_cast<T>(scale * (-t[i] / pv + (A(1) - t[i]) / (A(1) - pv)));
        }
    });
}

template <Real T>
Tensor<T> total_loss(const DeepOutputs<T>& outputs, const SupervisionTargets<T>& targets, LossBreakdown* breakdown) {
    Tensor<T> total;
    LossBreakdown parts;
    for (std::size_t i = 0; i < 4; ++i) {
        Tensor<T> li = weighted_iou(outputs.region[i], targets.region, targets.weight);
        Tensor<T> lb = weighted_bce(outputs.region[i], targets.region, targets.weight);
        Tensor<T> le = bce(outputs.boundary[i], targets.boundary);
        parts.wiou[i] = static_cast<double>(li.item());
        parts.wbce[i] = static_cast<double>(lb.item());
        parts.boundary[i] = static_cast<double>(le.item());
        Tensor<T> stage = add(add(li, lb), le);
        total = total.defined() ? add(total, stage) : stage;
    }
    parts.total = static_cast<double>(total.item());
    if (breakdown) *breakdown = parts;
    return total;
}

#define SKIPGRAPH_INSTANTIATE_LOSSES(T)                                                                     \
    template Tensor<T> boundary_from_mask<T>(const Tensor<T>&);                                               \
    template Tensor<T> weight_map<T>(const Tensor<T>&);                                                       \
    template SupervisionTargets<T> make_targets<T>(const Tensor<T>&);                                         \
    template Tensor<T> weighted_bce<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> weighted_iou<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> bce<T>(const Tensor<T>&, const Tensor<T>&);                                            \
    template Tensor<T> total_loss<T>(const DeepOutputs<T>&, const SupervisionTargets<T>&, LossBreakdown*);

SKIPGRAPH_INSTANTIATE_LOSSES(float)
SKIPGRAPH_INSTANTIATE_LOSSES(double)
SKIPGRAPH_INSTANTIATE_LOSSES(long double)

} // namespace skipgraph
