#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "skipgraph/parameters.hpp"

namespace skipgraph {

struct GradCheckEntry {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t probed = 0;
    /// Error along one random +-1 direction over the whole tensor, when requested.
    double directional_rel_error = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;

    double max_rel_error() const;
    const GradCheckEntry& worst() const;
};

template <Real T>
constexpr double default_fd_step() {
    return std::same_as<T, float> ? 1e-3 : 1e-6;
}

struct GradCheckOptions {
    double eps = 0.0; // 0 picks default_fd_step<T>()
    /// Replay every discrete decision (ReLU masks, argmax picks, KNN tables,
    /// channel selections) of the reference pass while probing.
    bool freeze_decisions = true;
    /// Probe at most this many elements per parameter, evenly strided. 0 = all.
    std::size_t max_probes_per_param = 0;
    /// 2: (f(+e) - f(-e)) / 2e. 4: the five-point central stencil
    /// (-f(+2e) + 8 f(+e) - 8 f(-e) + f(-2e)) / 12e.
    int stencil = 2;
    /// Also compare the gradient projected on a random +-1 direction per tensor.
    bool directional = false;
    std::uint64_t seed = 1;
    /// Floor on the relative-error denominator. Gradients that are zero by
    /// construction (a bias feeding straight into batch norm) otherwise
    /// compare finite-difference noise against itself.
    double abs_floor = 1e-8;
};

/// Compares reverse-mode gradients of the scalar `loss` against central
/// differences (f(θ+ε) − f(θ−ε)) / 2ε for every element of every parameter.
/// Relative error uses the denominator max(|analytic|, |numeric|, abs_floor).
template <Real T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& loss, std::span<const Parameter<T>> params,
                           GradCheckOptions options = {});

/// As grad_check, but the finite differences are evaluated on a reference
/// copy of the model (typically long double) that replays the decisions
/// recorded by the analytic pass. `ref_params` is overwritten with the values
/// of `params` first and must list the same tensors in the same order.
template <Real T, Real R>
GradCheckReport grad_check_with_reference(const std::function<Tensor<T>()>& loss,
                                          std::span<const Parameter<T>> params,
                                          const std::function<Tensor<R>()>& ref_loss,
                                          std::span<const Parameter<R>> ref_params, GradCheckOptions options = {});

double relative_error(double analytic, double numeric, double floor = 1e-8);

} // namespace skipgraph
