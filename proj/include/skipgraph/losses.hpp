#pragma once

#include <array>

#include "skipgraph/model.hpp"

namespace skipgraph {

inline constexpr double kProbClamp = 1e-7;
inline constexpr double kIouSmooth = 1.0;
inline constexpr std::size_t kWeightWindow = 31;

/// Region and boundary ground truths plus the pixel weight map, all
/// [B, 1, H, W] and constant (no grad).
template <Real T>
struct SupervisionTargets {
    Tensor<T> region;
    Tensor<T> boundary;
    Tensor<T> weight;
};

/// 3x3 Sobel pair with reflect padding; 1 where the gradient magnitude is
/// nonzero. Throws ValidationError on a non-binary mask.
template <Real T>
Tensor<T> boundary_from_mask(const Tensor<T>& mask);

/// omega = 1 + 5 |avgpool31(mask) - mask|. The window mean counts only pixels
/// inside the image, so a constant mask gives omega = 1 everywhere.
template <Real T>
Tensor<T> weight_map(const Tensor<T>& mask);

template <Real T>
SupervisionTargets<T> make_targets(const Tensor<T>& mask);

// Each loss is evaluated per image and then averaged over the batch.

/// sum(omega * bce) / sum(omega), with P clamped to [1e-7, 1 - 1e-7].
template <Real T>
Tensor<T> weighted_bce(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& weight);

/// 1 - (sum(omega P R) + 1) / (sum(omega (P + R - P R)) + 1).
template <Real T>
Tensor<T> weighted_iou(const Tensor<T>& pred, const Tensor<T>& target, const Tensor<T>& weight);

/// Unweighted mean BCE with the same clamp.
template <Real T>
Tensor<T> bce(const Tensor<T>& pred, const Tensor<T>& target);

struct LossBreakdown {
    std::array<double, 4> wiou{};
    std::array<double, 4> wbce{};
    std::array<double, 4> boundary{};
    double total = 0.0;

    double wiou_sum() const { return wiou[0] + wiou[1] + wiou[2] + wiou[3]; }
    double wbce_sum() const { return wbce[0] + wbce[1] + wbce[2] + wbce[3]; }
    double boundary_sum() const { return boundary[0] + boundary[1] + boundary[2] + boundary[3]; }
};

/// Sum over the four deep-supervision pairs of wIoU + wBCE on the region and
/// BCE on the boundary.
template <Real T>
Tensor<T> total_loss(const DeepOutputs<T>& outputs, const SupervisionTargets<T>& targets,
                     LossBreakdown* breakdown = nullptr);

} // namespace skipgraph
