#include "skipgraph/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <optional>

#include "skipgraph/random.hpp"

namespace skipgraph {

double relative_error(double analytic, double numeric, double floor) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

double GradCheckReport::max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max({m, e.max_rel_error, e.directional_rel_error});
    return m;
}

const GradCheckEntry& GradCheckReport::worst() const {
    if (entries.empty()) throw ValidationError("grad_check report is empty");
    return *std::max_element(entries.begin(), entries.end(),
                             [](const auto& a, const auto& b) { return a.max_rel_error < b.max_rel_error; });
}

namespace {

// Analytic gradients come from `loss` over `params`; the finite differences
// are taken on `ref_loss` over `ref_params`, which may be the same model or a
// copy in a wider type. Both replay one decision tape.
template <Real T, Real R>
GradCheckReport check_impl(const std::function<Tensor<T>()>& loss, std::span<const Parameter<T>> params,
                           const std::function<Tensor<R>()>& ref_loss, std::span<const Parameter<R>> ref_params,
                           GradCheckOptions options) {
    using A = Accum<R>;
    const A eps = options.eps > 0 ? static_cast<A>(options.eps) : static_cast<A>(default_fd_step<T>());
    if (options.stencil != 2 && options.stencil != 4) throw ConfigError("grad_check: stencil must be 2 or 4");
    if (ref_params.size() != params.size()) throw ValidationError("grad_check: reference parameter lists differ");
    DecisionTape tape(DecisionTape::Mode::record);
    std::optional<TapeScope> scope;
    if (options.freeze_decisions) scope.emplace(tape);

    for (const auto& p : params) p.value.node()->grad.clear();
    {
        Tensor<T> l = loss();
        if (!std::isfinite(static_cast<double>(l.item()))) throw NumericError("grad_check: non-finite loss");
        l.backward();
    }
    std::vector<std::vector<T>> analytic;
    for (const auto& p : params) {
        if (p.value.has_grad())
            analytic.emplace_back(p.value.grad().begin(), p.value.grad().end());
        else
            analytic.emplace_back(p.value.numel(), T(0));
    }

    tape.set_mode(DecisionTape::Mode::replay);
    NoGradGuard no_grad;
    auto probe = [&]() -> A {
        tape.rewind();
        const A v = static_cast<A>(ref_loss().item());
        if (!std::isfinite(static_cast<double>(v))) throw NumericError("grad_check: non-finite loss while probing");
        return v;
    };

    // Central difference of t -> f(theta + t * dir) at t = 0.
    auto central = [&](const std::function<void(A)>& shift) -> double {
        auto at = [&](A t) {
            shift(t);
            return probe();
        };
        A d;
        if (options.stencil == 4)
            d = (-at(2 * eps) + 8 * at(eps) - 8 * at(-eps) + at(-2 * eps)) / (12 * eps);
        else
            d = (at(eps) - at(-eps)) / (2 * eps);
        shift(A(0));
        return static_cast<double>(d);
    };

    GradCheckReport report;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<R> value = ref_params[pi].value;
        if (value.shape() != params[pi].value.shape())
            throw ValidationError("grad_check: reference parameter " + ref_params[pi].name + " has another shape");
        auto data = value.data();
        GradCheckEntry entry;
        entry.name = params[pi].name;
        const std::size_t n = data.size();
        const std::size_t stride =
            options.max_probes_per_param == 0 || n <= options.max_probes_per_param
                ? 1
                : (n + options.max_probes_per_param - 1) / options.max_probes_per_param;
        for (std::size_t i = 0; i < n; i += stride) {
            const R saved = data[i];
            const double numeric = central([&](A t) { data[i] = t == A(0) ? saved : static_cast<R>(saved + t); });
            const double a = static_cast<double>(analytic[pi][i]);
            const double err = relative_error(a, numeric, options.abs_floor);
            ++entry.probed;
            if (entry.probed == 1 || err > entry.max_rel_error) {
                entry.max_rel_error = err;
                entry.worst_index = i;
                entry.analytic = a;
                entry.numeric = numeric;
            }
        }
        if (options.directional) {
            Rng rng(stream_seed(options.seed, 0x6c, pi));
            std::vector<R> saved(data.begin(), data.end());
            std::vector<A> dir(n);
            double a = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                dir[i] = rng.bernoulli(0.5) ? A(1) : A(-1);
                a += static_cast<double>(dir[i]) * static_cast<double>(analytic[pi][i]);
            }
            const double numeric = central([&](A t) {
                for (std::size_t i = 0; i < n; ++i)
                    data[i] = t == A(0) ? saved[i] : static_cast<R>(saved[i] + t * dir[i]);
            });
            entry.directional_rel_error = relative_error(a, numeric, options.abs_floor);
        }
        report.entries.push_back(entry);
    }
    return report;
}

} // namespace

template <Real T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& loss, std::span<const Parameter<T>> params,
                           GradCheckOptions options) {
    return check_impl<T, T>(loss, params, loss, params, options);
}

template <Real T, Real R>
GradCheckReport grad_check_with_reference(const std::function<Tensor<T>()>& loss,
                                          std::span<const Parameter<T>> params,
                                          const std::function<Tensor<R>()>& ref_loss,
                                          std::span<const Parameter<R>> ref_params, GradCheckOptions options) {
    for (std::size_t i = 0; i < std::min(params.size(), ref_params.size()); ++i) {
        auto src = params[i].value.data();
        auto dst = Tensor<R>(ref_params[i].value).data();
        if (src.size() != dst.size())
            throw ValidationError("grad_check: reference parameter " + ref_params[i].name + " has another size");
        for (std::size_t j = 0; j < src.size(); ++j) dst[j] = static_cast<R>(src[j]);
    }
    return check_impl<T, R>(loss, params, ref_loss, ref_params, options);
}

template GradCheckReport grad_check_with_reference<double, long double>(
    const std::function<Tensor<double>()>&, std::span<const Parameter<double>>,
    const std::function<Tensor<long double>()>&, std::span<const Parameter<long double>>, GradCheckOptions);
template GradCheckReport grad_check_with_reference<float, long double>(
    const std::function<Tensor<float>()>&, std::span<const Parameter<float>>,
    const std::function<Tensor<long double>()>&, std::span<const Parameter<long double>>, GradCheckOptions);
template GradCheckReport grad_check<long double>(const std::function<Tensor<long double>()>&,
                                                 std::span<const Parameter<long double>>, GradCheckOptions);
template GradCheckReport grad_check<float>(const std::function<Tensor<float>()>&, std::span<const Parameter<float>>,
                                           GradCheckOptions);
template GradCheckReport grad_check<double>(const std::function<Tensor<double>()>&,
                                            std::span<const Parameter<double>>, GradCheckOptions);

} // namespace skipgraph
