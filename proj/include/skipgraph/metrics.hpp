#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "skipgraph/errors.hpp"

namespace skipgraph {

struct ConfusionCounts {
    std::size_t tp = 0;
    std::size_t fp = 0;
    std::size_t fn = 0;
    std::size_t tn = 0;
};

/// Masks are row-major bytes, nonzero = foreground. `pred` comes first.
ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth);

/// 2 TP / (2 TP + FP + FN); 1 when both masks are empty.
double dsc(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
/// TP / (TP + FP + FN); 1 when both masks are empty.
double miou(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b);
/// Mean absolute difference of two soft maps.
double mae(std::span<const double> a, std::span<const double> b);

/// 95th-percentile symmetric Hausdorff distance in pixels between the
/// foregrounds of two H x W masks. Each directed distance list is sorted and
/// read at rank 0.95 (n - 1) with linear interpolation; the larger of the two
/// directions is returned. Throws ValidationError if either mask is empty.
double hd95(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b, std::size_t height, std::size_t width);

/// Squared Euclidean distance from every pixel to the nearest foreground
/// pixel of `mask` (exact, separable lower-envelope transform). Pixels of an
/// empty mask get +inf.
std::vector<double> squared_distance_transform(std::span<const std::uint8_t> mask, std::size_t height,
                                               std::size_t width);

/// Linear-interpolated percentile of an unsorted sample, q in [0, 1].
double percentile(std::vector<double> values, double q);

/// p >= 0.5 -> 1.
template <typename T>
std::vector<std::uint8_t> binarize(std::span<const T> values, double threshold = 0.5) {
    std::vector<std::uint8_t> out(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) out[i] = static_cast<double>(values[i]) >= threshold ? 1 : 0;
    return out;
}

} // namespace skipgraph
