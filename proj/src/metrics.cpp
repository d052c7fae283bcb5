#include "skipgraph/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace skipgraph {

namespace {

void check_sizes(std::size_t a, std::size_t b, const char* what) {
    if (a != b) throw DimensionError(std::string(what) + ": mask sizes differ (" + std::to_string(a) + " vs " +
                                     std::to_string(b) + ")");
}

// Lower envelope of parabolas over one row (Felzenszwalb & Huttenlocher).
void edt_1d(const double* f, double* d, std::size_t n, std::vector<std::size_t>& v, std::vector<double>& z) {
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::size_t first = 0;
    while (first < n && std::isinf(f[first])) ++first;
    if (first == n) {
        std::fill(d, d + n, inf);
        return;
    }
    std::size_t k = 0;
    v[0] = first;
    z[0] = -inf;
    z[1] = inf;
    for (std::size_t q = first + 1; q < n; ++q) {
        if (std::isinf(f[q])) continue;
        const double fq = f[q] + static_cast<double>(q * q);
        double s;
        while (true) {
            const std::size_t p = v[k];
            s = (fq - (f[p] + static_cast<double>(p * p))) / (2.0 * static_cast<double>(q) - 2.0 * static_cast<double>(p));
            if (s > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = inf;
    }
    k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (z[k + 1] < static_cast<double>(q)) ++k;
        const double diff = static_cast<double>(q) - static_cast<double>(v[k]);
        d[q] = diff * diff + f[v[k]];
    }
}

std::vector<double> directed(std::span<const std::uint8_t> from, std::span<const std::uint8_t> to, std::size_t H,
                             std::size_t W) {
    const auto dt = squared_distance_transform(to, H, W);
    std::vector<double> out;
    for (std::size_t i = 0; i < H * W; ++i)
        if (from[i]) out.push_back(std::sqrt(dt[i]));
    return out;
}

} // namespace

ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth) {
    check_sizes(pred.size(), truth.size(), "confusion");
    ConfusionCounts c;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, t = truth[i] != 0;
        if (p && t) ++c.tp;
        else if (p) ++c.fp;
        else if (t) ++c.fn;
        else ++c.tn;
    }
    return c;
}

double dsc(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    const auto c = confusion(a, b);
    const std::size_t den = 2 * c.tp + c.fp + c.fn;
    return den == 0 ? 1.0 : static_cast<double>(2 * c.tp) / static_cast<double>(den);
}

double miou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
    const auto c = confusion(a, b);
    const std::size_t den = c.tp + c.fp + c.fn;
    return den == 0 ? 1.0 : static_cast<double>(c.tp) / static_cast<double>(den);
}

double mae(std::span<const double> a, std::span<const double> b) {
    check_sizes(a.size(), b.size(), "mae");
    if (a.empty()) throw DimensionError("mae: empty maps");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return acc / static_cast<double>(a.size());
}

std::vector<double> squared_distance_transform(std::span<const std::uint8_t> mask, std::size_t H, std::size_t W) {
    check_sizes(mask.size(), H * W, "distance transform");
    constexpr double inf = std::numeric_limits<double>::infinity();
    std::vector<double> g(H * W);
    for (std::size_t i = 0; i < H * W; ++i) g[i] = mask[i] ? 0.0 : inf;
    const std::size_t n = std::max(H, W);
    std::vector<double> f(n), d(n), z(n + 1);
    std::vector<std::size_t> v(n);
    for (std::size_t x = 0; x < W; ++x) {
        for (std::size_t y = 0; y < H; ++y) f[y] = g[y * W + x];
        edt_1d(f.data(), d.data(), H, v, z);
        for (std::size_t y = 0; y < H; ++y) g[y * W + x] = d[y];
    }
    for (std::size_t y = 0; y < H; ++y) {
        edt_1d(g.data() + y * W, d.data(), W, v, z);
        std::copy(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(W), g.begin() + static_cast<std::ptrdiff_t>(y * W));
    }
    return g;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw ValidationError("percentile of an empty sample");
    std::sort(values.begin(), values.end());
    const double rank = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(rank));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = rank - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

double hd95(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, std::size_t H, std::size_t W) {
    check_sizes(a.size(), H * W, "hd95");
    check_sizes(b.size(), H * W, "hd95");
    const auto nonempty = [](std::span<const std::uint8_t> m) {
        return std::any_of(m.begin(), m.end(), [](std::uint8_t v) { return v != 0; });
    };
    if (!nonempty(a) || !nonempty(b)) throw ValidationError("hd95: undefined for an empty mask");
    return std::max(percentile(directed(a, b, H, W), 0.95), percentile(directed(b, a, H, W), 0.95));
}

} // namespace skipgraph
