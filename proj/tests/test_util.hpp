#pragma once

#include <gtest/gtest.h>

#include <vector>

#include "skipgraph/ops.hpp"
#include "skipgraph/random.hpp"

namespace testutil {

using namespace skipgraph;

template <Real T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<T> v(shape_numel(shape));
    for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
    return Tensor<T>(std::move(shape), std::move(v));
}

template <Real T>
Tensor<T> leaf(Tensor<T> t) {
    t.set_requires_grad(true);
    return t;
}

template <Real T>
std::vector<double> values(const Tensor<T>& t) {
    return std::vector<double>(t.data().begin(), t.data().end());
}

inline void expect_all_near(const std::vector<double>& got, const std::vector<double>& want, double tol) {
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], tol) << "at " << i;
}

} // namespace testutil
