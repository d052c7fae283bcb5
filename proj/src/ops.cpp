#include "skipgraph/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gemm.hpp"

namespace skipgraph {

using detail::finish;
using detail::grad_sink;

namespace {

// Broadcasting ------------------------------------------------------------------

struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> stride_a;
    std::vector<std::size_t> stride_b;
    bool same = false;
};

std::vector<std::size_t> row_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

BroadcastPlan plan_broadcast(const Shape& a, const Shape& b, const char* op) {
    BroadcastPlan p;
    if (a == b) {
        p.out = a;
        p.same = true;
        return p;
    }
    const std::size_t r = std::max(a.size(), b.size());
    Shape pa(r - a.size(), 1), pb(r - b.size(), 1);
    pa.insert(pa.end(), a.begin(), a.end());
    pb.insert(pb.end(), b.begin(), b.end());
    auto sa = row_strides(pa), sb = row_strides(pb);
    p.out.resize(r);
    p.stride_a.resize(r);
    p.stride_b.resize(r);
    for (std::size_t i = 0; i < r; ++i) {
        if (pa[i] != pb[i] && pa[i] != 1 && pb[i] != 1)
            throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        p.out[i] = std::max(pa[i], pb[i]);
        p.stride_a[i] = pa[i] == 1 ? 0 : sa[i];
        p.stride_b[i] = pb[i] == 1 ? 0 : sb[i];
    }
    return p;
}

template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
    const std::size_t n = shape_numel(p.out);
    if (p.same) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    const std::size_t r = p.out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t ax = r; ax-- > 0;) {
            ++idx[ax];
            ia += p.stride_a[ax];
            ib += p.stride_b[ax];
            if (idx[ax] < p.out[ax]) break;
            ia -= p.stride_a[ax] * p.out[ax];
            ib -= p.stride_b[ax] * p.out[ax];
            idx[ax] = 0;
        }
    }
}

enum class BinKind { add, sub, mul, div };

template <Real T>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, BinKind kind, const char* op) {
    auto plan = plan_broadcast(a.shape(), b.shape(), op);
    std::vector<T> out(shape_numel(plan.out));
    auto av = a.data();
    auto bv = b.data();
    for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
        switch (kind) {
        case BinKind::add: out[i] = av[ia] + bv[ib]; break;
        case BinKind::sub: out[i] = av[ia] - bv[ib]; break;
        case BinKind::mul: out[i] = av[ia] * bv[ib]; break;
        case BinKind::div: out[i] = av[ia] / bv[ib]; break;
        }
    });
    return finish<T>(op, plan.out, std::move(out), {&a, &b}, [a, b, plan, kind](std::span<const T> g) {
        T* ga = grad_sink(a);
        T* gb = grad_sink(b);
        auto av = a.data();
        auto bv = b.data();
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            switch (kind) {
            case BinKind::add:
                if (ga) ga[ia] += g[i];
                if (gb) gb[ib] += g[i];
                break;
            case BinKind::sub:
                if (ga) ga[ia] += g[i];
                if (gb) gb[ib] -= g[i];
                break;
            case BinKind::mul:
                if (ga) ga[ia] += g[i] * bv[ib];
                if (gb) gb[ib] += g[i] * av[ia];
                break;
            case BinKind::div:
                if (ga) ga[ia] += g[i] / bv[ib];
                if (gb) gb[ib] -= g[i] * av[ia] / (bv[ib] * bv[ib]);
                break;
            }
        });
    });
}

struct AxisSplit {
    std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
    AxisSplit r;
    for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
    r.n = s[axis];
    for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
    return r;
}

void require_rank_at_least(const Shape& s, std::size_t r, const char* op) {
    if (s.size() < r)
        throw DimensionError(std::string(op) + ": expected rank >= " + std::to_string(r) + ", got " + shape_str(s));
}

} // namespace

template <Real T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, BinKind::add, "add"); }
template <Real T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, BinKind::sub, "sub"); }
template <Real T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, BinKind::mul, "mul"); }
template <Real T> Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) { return binary(a, b, BinKind::div, "div"); }

template <Real T>
Tensor<T> add_scalar(const Tensor<T>& a, T s) {
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v += s;
    return finish<T>("add_scalar", a.shape(), std::move(out), {&a}, [a](std::span<const T> g) {
        T* ga = grad_sink(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

template <Real T>
Tensor<T> mul_scalar(const Tensor<T>& a, T s) {
    std::vector<T> out(a.data().begin(), a.data().end());
    for (auto& v : out) v *= s;
    return finish<T>("mul_scalar", a.shape(), std::move(out), {&a}, [a, s](std::span<const T> g) {
        T* ga = grad_sink(a);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
    });
}

template <Real T>
Tensor<T> relu(const Tensor<T>& x) {
    auto xv = x.data();
    auto mask = decide([&] {
        std::vector<std::int32_t> m(xv.size());
        for (std::size_t i = 0; i < xv.size(); ++i) m[i] = xv[i] > T(0) ? 1 : 0;
        return m;
    });
    if (mask.size() != xv.size()) throw GraphError("relu: replayed mask has the wrong size");
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) out[i] = mask[i] ? xv[i] : T(0);
    return finish<T>("relu", x.shape(), std::move(out), {&x}, [x, mask = std::move(mask)](std::span<const T> g) {
        T* gx = grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i)
            if (mask[i]) gx[i] += g[i];
    });
}

template <Real T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    // Clamped so the result stays strictly inside (0, 1) even when saturated.
    constexpr T lo = std::numeric_limits<T>::min();
    constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
    auto xv = x.data();
    std::vector<T> out(xv.size());
    for (std::size_t i = 0; i < xv.size(); ++i) {
        T v = xv[i];
        T s;
        if (v >= T(0)) {
            s = T(1) / (T(1) + std::exp(-v));
        } else {
            T e = std::exp(v);
            s = e / (T(1) + e);
        }
        out[i] = std::clamp(s, lo, hi);
    }
    auto result = finish<T>("sigmoid", x.shape(), std::move(out), {&x}, {});
    if (result.requires_grad()) {
        // Captures the output node weakly so the closure does not keep it alive.
        std::weak_ptr<detail::Node<T>> self = result.node();
        result.node()->backward_fn = [x, self](std::span<const T> g) {
            auto s = self.lock();
            T* gx = grad_sink(x);
            for (std::size_t i = 0; i < g.size(); ++i) {
                T p = s->value[i];
                gx[i] += g[i] * p * (T(1) - p);
            }
        };
    }
    return result;
}

template <Real T>
Tensor<T> sum(const Tensor<T>& x) {
    Accum<T> acc = 0.0;
    for (T v : x.data()) acc += v;
    return finish<T>("sum", Shape{}, {static_cast<T>(acc)}, {&x}, [x](std::span<const T> g) {
        T* gx = grad_sink(x);
        for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[0];
    });
}

template <Real T>
Tensor<T> mean(const Tensor<T>& x) {
    Accum<T> acc = 0.0;
    for (T v : x.data()) acc += v;
    const T inv = T(1) / static_cast<T>(x.numel());
    return finish<T>("mean", Shape{}, {static_cast<T>(acc / static_cast<Accum<T>>(x.numel()))}, {&x},
                     [x, inv](std::span<const T> g) {
                         T* gx = grad_sink(x);
                         for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += g[0] * inv;
                     });
}

template <Real T>
Tensor<T> global_pool(const Tensor<T>& x, std::size_t axis, PoolKind kind) {
    if (axis >= x.rank()) throw DimensionError("global_pool: axis out of range for " + shape_str(x.shape()));
    const auto sp = split_at(x.shape(), axis);
    Shape oshape = x.shape();
    oshape[axis] = 1;
    auto xv = x.data();
    std::vector<T> out(sp.outer * sp.inner);
    if (kind == PoolKind::avg) {
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                Accum<T> acc = 0.0;
                for (std::size_t k = 0; k < sp.n; ++k) acc += xv[(o * sp.n + k) * sp.inner + i];
                out[o * sp.inner + i] = static_cast<T>(acc / static_cast<Accum<T>>(sp.n));
            }
        return finish<T>("global_avg_pool", oshape, std::move(out), {&x}, [x, sp](std::span<const T> g) {
            T* gx = grad_sink(x);
            const T inv = T(1) / static_cast<T>(sp.n);
            for (std::size_t o = 0; o < sp.outer; ++o)
                for (std::size_t k = 0; k < sp.n; ++k)
                    for (std::size_t i = 0; i < sp.inner; ++i)
                        gx[(o * sp.n + k) * sp.inner + i] += g[o * sp.inner + i] * inv;
        });
    }
    auto arg = decide([&] {
        std::vector<std::int32_t> a(sp.outer * sp.inner);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i) {
                std::size_t best = 0;
                T bv = xv[o * sp.n * sp.inner + i];
                for (std::size_t k = 1; k < sp.n; ++k) {
                    T v = xv[(o * sp.n + k) * sp.inner + i];
                    if (v > bv) {
                        bv = v;
                        best = k;
                    }
                }
                a[o * sp.inner + i] = static_cast<std::int32_t>(best);
            }
        return a;
    });
    if (arg.size() != out.size()) throw GraphError("global_pool: replayed argmax has the wrong size");
    for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t i = 0; i < sp.inner; ++i)
            out[o * sp.inner + i] = xv[(o * sp.n + static_cast<std::size_t>(arg[o * sp.inner + i])) * sp.inner + i];
    return finish<T>("global_max_pool", oshape, std::move(out), {&x}, [x, sp, arg = std::move(arg)](std::span<const T> g) {
        T* gx = grad_sink(x);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t i = 0; i < sp.inner; ++i)
                gx[(o * sp.n + static_cast<std::size_t>(arg[o * sp.inner + i])) * sp.inner + i] += g[o * sp.inner + i];
    });
}

template <Real T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(shape));
    std::vector<T> out(x.data().begin(), x.data().end());
    return finish<T>("reshape", std::move(shape), std::move(out), {&x}, [x](std::span<const T> g) {
        T* gx = grad_sink(x);
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
}

template <Real T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    const Shape& s0 = parts[0].shape();
    if (axis >= s0.size()) throw DimensionError("concat: axis out of range");
    Shape oshape = s0;
    oshape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (s.size() != s0.size()) throw DimensionError("concat: rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != s0[i])
                throw DimensionError("concat: " + shape_str(s) + " vs " + shape_str(s0));
        oshape[axis] += s[axis];
    }
    const auto sp = split_at(oshape, axis);
    std::vector<T> out(shape_numel(oshape));
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t n = p.shape()[axis];
        auto pv = p.data();
        for (std::size_t o = 0; o < sp.outer; ++o)
            std::copy_n(pv.begin() + o * n * sp.inner, n * sp.inner,
                        out.begin() + (o * sp.n + offset) * sp.inner);
        offset += n;
    }
    return finish<T>("concat", oshape, std::move(out), parts, [parts, sp, axis](std::span<const T> g) {
        std::size_t offset = 0;
        for (const auto& p : parts) {
            const std::size_t n = p.shape()[axis];
            if (T* gp = grad_sink(p)) {
                for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t j = 0; j < n * sp.inner; ++j)
                        gp[o * n * sp.inner + j] += g[(o * sp.n + offset) * sp.inner + j];
            }
            offset += n;
        }
    });
}

template <Real T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
    if (axis >= x.rank() || begin >= end || end > x.shape()[axis])
        throw DimensionError("slice: [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                             std::to_string(axis) + " of " + shape_str(x.shape()));
    const auto sp = split_at(x.shape(), axis);
    Shape oshape = x.shape();
    oshape[axis] = end - begin;
    const std::size_t n = end - begin;
    auto xv = x.data();
    std::vector<T> out(sp.outer * n * sp.inner);
    for (std::size_t o = 0; o < sp.outer; ++o)
        std::copy_n(xv.begin() + (o * sp.n + begin) * sp.inner, n * sp.inner, out.begin() + o * n * sp.inner);
    return finish<T>("slice", oshape, std::move(out), {&x}, [x, sp, begin, n](std::span<const T> g) {
        T* gx = grad_sink(x);
        for (std::size_t o = 0; o < sp.outer; ++o)
            for (std::size_t j = 0; j < n * sp.inner; ++j) gx[(o * sp.n + begin) * sp.inner + j] += g[o * n * sp.inner + j];
    });
}

template <Real T>
Tensor<T> gather_channels(const Tensor<T>& x, const std::vector<std::vector<std::int32_t>>& index) {
    require_rank_at_least(x.shape(), 2, "gather_channels");
    const std::size_t B = x.shape()[0], C = x.shape()[1];
    const std::size_t S = x.numel() / (B * C);
    if (index.size() != B) throw DimensionError("gather_channels: need one index list per batch item");
    const std::size_t M = index.empty() ? 0 : index[0].size();
    if (M == 0) throw DimensionError("gather_channels: empty index list");
    for (const auto& row : index) {
        if (row.size() != M) throw DimensionError("gather_channels: ragged index lists");
        for (auto c : row)
            if (c < 0 || static_cast<std::size_t>(c) >= C)
                throw DimensionError("gather_channels: channel index " + std::to_string(c) + " out of range");
    }
    Shape oshape = x.shape();
    oshape[1] = M;
    auto xv = x.data();
    std::vector<T> out(B * M * S);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t m = 0; m < M; ++m)
            std::copy_n(xv.begin() + (b * C + static_cast<std::size_t>(index[b][m])) * S, S,
                        out.begin() + (b * M + m) * S);
    return finish<T>("gather_channels", oshape, std::move(out), {&x}, [x, index, B, C, M, S](std::span<const T> g) {
        T* gx = grad_sink(x);
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t m = 0; m < M; ++m) {
                const std::size_t src = (b * C + static_cast<std::size_t>(index[b][m])) * S;
                for (std::size_t s = 0; s < S; ++s) gx[src + s] += g[(b * M + m) * S + s];
            }
    });
}

template <Real T>
Tensor<T> conv2d_1x1(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
    require_rank_at_least(x.shape(), 2, "conv2d_1x1");
    if (weight.rank() != 2) throw DimensionError("conv2d_1x1: weight must be [C_out, C_in]");
    const std::size_t B = x.shape()[0], Ci = x.shape()[1];
    const std::size_t Co = weight.shape()[0];
    if (weight.shape()[1] != Ci)
        throw DimensionError("conv2d_1x1: weight " + shape_str(weight.shape()) + " vs input " + shape_str(x.shape()));
    if (bias.defined() && (bias.rank() != 1 || bias.shape()[0] != Co))
        throw DimensionError("conv2d_1x1: bias must be [C_out]");
    const std::size_t P = x.numel() / (B * Ci);
    Shape oshape = x.shape();
    oshape[1] = Co;
    std::vector<T> out(B * Co * P, T(0));
    auto xv = x.data();
    auto wv = weight.data();
    for (std::size_t b = 0; b < B; ++b) {
        T* ob = out.data() + b * Co * P;
        if (bias.defined())
            for (std::size_t o = 0; o < Co; ++o) std::fill_n(ob + o * P, P, bias.data()[o]);
        gemm::nn(Co, P, Ci, wv.data(), xv.data() + b * Ci * P, ob);
    }
    return finish<T>("conv2d_1x1", oshape, std::move(out), {&x, &weight, &bias},
                     [x, weight, bias, B, Ci, Co, P](std::span<const T> g) {
                         T* gx = grad_sink(x);
                         T* gw = grad_sink(weight);
                         T* gb = grad_sink(bias);
                         auto xv = x.data();
                         auto wv = weight.data();
                         std::vector<T> xt;
                         for (std::size_t b = 0; b < B; ++b) {
                             const T* gob = g.data() + b * Co * P;
                             if (gb)
                                 for (std::size_t o = 0; o < Co; ++o)
                                     for (std::size_t p = 0; p < P; ++p) gb[o] += gob[p + o * P];
                             if (gw) {
                                 xt.resize(P * Ci);
                                 gemm::transpose(Ci, P, xv.data() + b * Ci * P, xt.data());
                                 gemm::nn(Co, Ci, P, gob, xt.data(), gw);
                             }
                             if (gx) gemm::tn(Ci, P, Co, wv.data(), gob, gx + b * Ci * P);
                         }
                     });
}

namespace {

// cols[(c*k + ky)*k + kx][oy*Wo + ox]
template <Real T>
void im2col(const T* x, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t Ho, std::size_t Wo, T* cols) {
    const std::size_t P = Ho * Wo;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                T* row = cols + ((c * k + ky) * k + kx) * P;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    T* dst = row + oy * Wo;
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) {
                        std::fill_n(dst, Wo, T(0));
                        continue;
                    }
                    const T* src = x + (c * H + static_cast<std::size_t>(iy)) * W;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        dst[ox] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) ? T(0) : src[ix];
                    }
                }
            }
}

template <Real T>
void col2im(const T* cols, std::size_t C, std::size_t H, std::size_t W, std::size_t k, std::size_t stride,
            std::size_t pad, std::size_t Ho, std::size_t Wo, T* x) {
    const std::size_t P = Ho * Wo;
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
                const T* row = cols + ((c * k + ky) * k + kx) * P;
                for (std::size_t oy = 0; oy < Ho; ++oy) {
                    const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
                    if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
                    T* dst = x + (c * H + static_cast<std::size_t>(iy)) * W;
                    for (std::size_t ox = 0; ox < Wo; ++ox) {
                        const std::ptrdiff_t ix =
                            static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
                        if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(W)) dst[ix] += row[oy * Wo + ox];
                    }
                }
            }
}

} // namespace

template <Real T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride,
                 std::size_t padding) {
    if (x.rank() != 4) throw DimensionError("conv2d: input must be [B, C, H, W], got " + shape_str(x.shape()));
    if (weight.rank() != 4 || weight.shape()[2] != weight.shape()[3])
        throw DimensionError("conv2d: weight must be [C_out, C_in, k, k]");
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    const std::size_t B = x.shape()[0], Ci = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    const std::size_t Co = weight.shape()[0], k = weight.shape()[2];
    if (weight.shape()[1] != Ci)
        throw DimensionError("conv2d: weight " + shape_str(weight.shape()) + " vs input " + shape_str(x.shape()));
    if (bias.defined() && (bias.rank() != 1 || bias.shape()[0] != Co))
        throw DimensionError("conv2d: bias must be [C_out]");
    if (H + 2 * padding < k || W + 2 * padding < k) throw DimensionError("conv2d: kernel larger than padded input");
    const std::size_t Ho = (H + 2 * padding - k) / stride + 1;
    const std::size_t Wo = (W + 2 * padding - k) / stride + 1;
    const std::size_t P = Ho * Wo, K = Ci * k * k;

    std::vector<T> out(B * Co * P, T(0));
    std::vector<T> cols(K * P);
    auto xv = x.data();
    auto wv = weight.data();
    for (std::size_t b = 0; b < B; ++b) {
        im2col(xv.data() + b * Ci * H * W, Ci, H, W, k, stride, padding, Ho, Wo, cols.data());
        T* ob = out.data() + b * Co * P;
        if (bias.defined())
            for (std::size_t o = 0; o < Co; ++o) std::fill_n(ob + o * P, P, bias.data()[o]);
        gemm::nn(Co, P, K, wv.data(), cols.data(), ob);
    }
    return finish<T>("conv2d", Shape{B, Co, Ho, Wo}, std::move(out), {&x, &weight, &bias},
                     [=](std::span<const T> g) {
                         T* gx = grad_sink(x);
                         T* gw = grad_sink(weight);
                         T* gb = grad_sink(bias);
                         auto xv = x.data();
                         auto wv = weight.data();
                         std::vector<T> cols(K * P), colsT;
                         for (std::size_t b = 0; b < B; ++b) {
                             const T* gob = g.data() + b * Co * P;
                             if (gb)
                                 for (std::size_t o = 0; o < Co; ++o)
                                     for (std::size_t p = 0; p < P; ++p) gb[o] += gob[o * P + p];
                             if (gw) {
                                 im2col(xv.data() + b * Ci * H * W, Ci, H, W, k, stride, padding, Ho, Wo, cols.data());
                                 colsT.resize(P * K);
                                 gemm::transpose(K, P, cols.data(), colsT.data());
                                 gemm::nn(Co, K, P, gob, colsT.data(), gw);
                             }
                             if (gx) {
                                 std::fill(cols.begin(), cols.end(), T(0));
                                 gemm::tn(K, P, Co, wv.data(), gob, cols.data());
                                 col2im(cols.data(), Ci, H, W, k, stride, padding, Ho, Wo, gx + b * Ci * H * W);
                             }
                         }
                     });
}

template <Real T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& weight) {
    if (x.rank() != 3 || x.shape()[1] != 1) throw DimensionError("conv1d: input must be [B, 1, L], got " + shape_str(x.shape()));
    if (weight.rank() != 3 || weight.shape()[0] != 1 || weight.shape()[1] != 1)
        throw DimensionError("conv1d: weight must be [1, 1, k]");
    const std::size_t k = weight.shape()[2];
    if (k % 2 == 0) throw ConfigError("conv1d: kernel width must be odd, got " + std::to_string(k));
    const std::size_t B = x.shape()[0], L = x.shape()[2];
    const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>((k - 1) / 2);
    auto xv = x.data();
    auto wv = weight.data();
    std::vector<T> out(B * L, T(0));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < L; ++i) {
            T acc = 0;
            for (std::size_t t = 0; t < k; ++t) {
                const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i + t) - pad;
                if (j >= 0 && j < static_cast<std::ptrdiff_t>(L)) acc += wv[t] * xv[b * L + static_cast<std::size_t>(j)];
            }
            out[b * L + i] = acc;
        }
    return finish<T>("conv1d", x.shape(), std::move(out), {&x, &weight}, [x, weight, B, L, k, pad](std::span<const T> g) {
        T* gx = grad_sink(x);
        T* gw = grad_sink(weight);
        auto xv = x.data();
        auto wv = weight.data();
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < L; ++i)
                for (std::size_t t = 0; t < k; ++t) {
                    const std::ptrdiff_t j = static_cast<std::ptrdiff_t>(i + t) - pad;
                    if (j < 0 || j >= static_cast<std::ptrdiff_t>(L)) continue;
                    const std::size_t src = b * L + static_cast<std::size_t>(j);
                    if (gx) gx[src] += g[b * L + i] * wv[t];
                    if (gw) gw[t] += g[b * L + i] * xv[src];
                }
    });
}

template <Real T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                     bool train) {
    require_rank_at_least(x.shape(), 2, "batch_norm");
    const std::size_t B = x.shape()[0], C = x.shape()[1];
    const std::size_t S = x.numel() / (B * C);
    const std::size_t n = B * S;
    if (gamma.numel() != C || beta.numel() != C || state.running_mean.numel() != C)
        throw DimensionError("batch_norm: parameter width does not match " + std::to_string(C) + " channels");
    if (train && n < 2) throw ValidationError("batch_norm: training needs at least two values per channel");

    auto xv = x.data();
    auto gv = gamma.data();
    auto bv = beta.data();
    std::vector<T> xhat(x.numel());
    std::vector<T> invstd(C);
    std::vector<T> out(x.numel());
    for (std::size_t c = 0; c < C; ++c) {
        Accum<T> m, var;
        if (train) {
            Accum<T> acc = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t s = 0; s < S; ++s) acc += xv[(b * C + c) * S + s];
            m = acc / static_cast<Accum<T>>(n);
            Accum<T> sq = 0.0;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t s = 0; s < S; ++s) {
                    const Accum<T> d = xv[(b * C + c) * S + s] - m;
                    sq += d * d;
                }
            var = sq / static_cast<Accum<T>>(n);
            auto rm = state.running_mean.data();
            auto rv = state.running_var.data();
            rm[c] = static_cast<T>((1.0 - kBatchNormMomentum) * rm[c] + kBatchNormMomentum * m);
            rv[c] = static_cast<T>((1.0 - kBatchNormMomentum) * rv[c] +
                                   kBatchNormMomentum * sq / static_cast<Accum<T>>(n - 1));
        } else {
            m = state.running_mean.data()[c];
            var = state.running_var.data()[c];
        }
        const T is = static_cast<T>(1.0 / std::sqrt(var + kBatchNormEps));
        const T mt = static_cast<T>(m);
        invstd[c] = is;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t s = 0; s < S; ++s) {
                const std::size_t i = (b * C + c) * S + s;
                xhat[i] = (xv[i] - mt) * is;
                out[i] = gv[c] * xhat[i] + bv[c];
            }
    }
    return finish<T>("batch_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                     [x, gamma, beta, train, B, C, S, n, xhat = std::move(xhat), invstd = std::move(invstd)](
                         std::span<const T> g) {
                         T* gx = grad_sink(x);
                         T* gg = grad_sink(gamma);
                         T* gbeta = grad_sink(beta);
                         auto gv = gamma.data();
                         for (std::size_t c = 0; c < C; ++c) {
                             Accum<T> sum_g = 0.0, sum_gx = 0.0;
                             for (std::size_t b = 0; b < B; ++b)
                                 for (std::size_t s = 0; s < S; ++s) {
                                     const std::size_t i = (b * C + c) * S + s;
                                     sum_g += g[i];
                                     sum_gx += static_cast<Accum<T>>(g[i]) * xhat[i];
                                 }
                             if (gg) gg[c] += static_cast<T>(sum_gx);
                             if (gbeta) gbeta[c] += static_cast<T>(sum_g);
                             if (!gx) continue;
                             if (train) {
                                 const T k = gv[c] * invstd[c] / static_cast<T>(n);
                                 const T mg = static_cast<T>(sum_g);
                                 const T mgx = static_cast<T>(sum_gx);
                                 for (std::size_t b = 0; b < B; ++b)
                                     for (std::size_t s = 0; s < S; ++s) {
                                         const std::size_t i = (b * C + c) * S + s;
                                         gx[i] += k * (static_cast<T>(n) * g[i] - mg - xhat[i] * mgx);
                                     }
                             } else {
                                 const T k = gv[c] * invstd[c];
                                 for (std::size_t b = 0; b < B; ++b)
                                     for (std::size_t s = 0; s < S; ++s) {
                                         const std::size_t i = (b * C + c) * S + s;
                                         gx[i] += k * g[i];
                                     }
                             }
                         }
                     });
}

namespace {

struct LerpTable {
    std::vector<std::size_t> i0, i1;
    std::vector<double> w1;
};

// Half-pixel-center source coordinates, clamped at the leading edge.
LerpTable lerp_table(std::size_t in, std::size_t out) {
    LerpTable t;
    t.i0.resize(out);
    t.i1.resize(out);
    t.w1.resize(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t d = 0; d < out; ++d) {
        double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
        if (src < 0) src = 0;
        auto i0 = static_cast<std::size_t>(std::floor(src));
        if (i0 > in - 1) i0 = in - 1;
        t.i0[d] = i0;
        t.i1[d] = i0 + (i0 < in - 1 ? 1 : 0);
        t.w1[d] = src - static_cast<double>(i0);
    }
    return t;
}

} // namespace

template <Real T>
Tensor<T> bilinear_resize(const Tensor<T>& x, std::size_t out_h, std::size_t out_w) {
    if (x.rank() != 4) throw DimensionError("bilinear_resize: input must be [B, C, H, W], got " + shape_str(x.shape()));
    if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_resize: target extents must be positive");
    const std::size_t B = x.shape()[0], C = x.shape()[1], H = x.shape()[2], W = x.shape()[3];
    if (H == out_h && W == out_w) return x;
    const auto ty = lerp_table(H, out_h);
    const auto tx = lerp_table(W, out_w);
    auto xv = x.data();
    std::vector<T> out(B * C * out_h * out_w);
    for (std::size_t bc = 0; bc < B * C; ++bc) {
        const T* src = xv.data() + bc * H * W;
        T* dst = out.data() + bc * out_h * out_w;
        for (std::size_t oy = 0; oy < out_h; ++oy) {
            const T wy1 = static_cast<T>(ty.w1[oy]), wy0 = T(1) - wy1;
            const T* r0 = src + ty.i0[oy] * W;
            const T* r1 = src + ty.i1[oy] * W;
            for (std::size_t ox = 0; ox < out_w; ++ox) {
                const T wx1 = static_cast<T>(tx.w1[ox]), wx0 = T(1) - wx1;
                dst[oy * out_w + ox] = wy0 * (wx0 * r0[tx.i0[ox]] + wx1 * r0[tx.i1[ox]]) +
                                       wy1 * (wx0 * r1[tx.i0[ox]] + wx1 * r1[tx.i1[ox]]);
            }
        }
    }
    return finish<T>("bilinear_resize", Shape{B, C, out_h, out_w}, std::move(out), {&x},
                     [x, ty, tx, B, C, H, W, out_h, out_w](std::span<const T> g) {
                         T* gx = grad_sink(x);
                         for (std::size_t bc = 0; bc < B * C; ++bc) {
                             T* dst = gx + bc * H * W;
                             const T* go = g.data() + bc * out_h * out_w;
                             for (std::size_t oy = 0; oy < out_h; ++oy) {
                                 const T wy1 = static_cast<T>(ty.w1[oy]), wy0 = T(1) - wy1;
                                 T* r0 = dst + ty.i0[oy] * W;
                                 T* r1 = dst + ty.i1[oy] * W;
                                 for (std::size_t ox = 0; ox < out_w; ++ox) {
                                     const T wx1 = static_cast<T>(tx.w1[ox]), wx0 = T(1) - wx1;
                                     const T v = go[oy * out_w + ox];
                                     r0[tx.i0[ox]] += v * wy0 * wx0;
                                     r0[tx.i1[ox]] += v * wy0 * wx1;
                                     r1[tx.i0[ox]] += v * wy1 * wx0;
                                     r1[tx.i1[ox]] += v * wy1 * wx1;
                                 }
                             }
                         }
                     });
}

#define SKIPGRAPH_INSTANTIATE_OPS(T)                                                                          \
    template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                           \
    template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                           \
    template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                           \
    template Tensor<T> div<T>(const Tensor<T>&, const Tensor<T>&);                                           \
    template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                                   \
    template Tensor<T> mul_scalar<T>(const Tensor<T>&, T);                                                   \
    template Tensor<T> relu<T>(const Tensor<T>&);                                                            \
    template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                         \
    template Tensor<T> sum<T>(const Tensor<T>&);                                                             \
    template Tensor<T> mean<T>(const Tensor<T>&);                                                            \
    template Tensor<T> global_pool<T>(const Tensor<T>&, std::size_t, PoolKind);                              \
    template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                                  \
    template Tensor<T> concat<T>(const std::vector<Tensor<T>>&, std::size_t);                                \
    template Tensor<T> slice<T>(const Tensor<T>&, std::size_t, std::size_t, std::size_t);                   \
    template Tensor<T> gather_channels<T>(const Tensor<T>&, const std::vector<std::vector<std::int32_t>>&);  \
    template Tensor<T> conv2d_1x1<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                 \
    template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, std::size_t,         \
                                 std::size_t);                                                               \
    template Tensor<T> conv1d<T>(const Tensor<T>&, const Tensor<T>&);                                        \
    template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,                  \
                                     BatchNormState<T>&, bool);                                              \
    template Tensor<T> bilinear_resize<T>(const Tensor<T>&, std::size_t, std::size_t);

SKIPGRAPH_INSTANTIATE_OPS(float)
SKIPGRAPH_INSTANTIATE_OPS(double)
SKIPGRAPH_INSTANTIATE_OPS(long double)

} // namespace skipgraph
