#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "skipgraph/grad_check.hpp"
#include "skipgraph/tensor_io.hpp"
#include "test_util.hpp"

using namespace skipgraph;
using namespace testutil;

namespace {

// 2x3x2x2 input with values (i mod 7) / 2 - 1.25.
Tensor<double> small_input() {
    std::vector<double> v(24);
    for (std::size_t i = 0; i < 24; ++i) v[i] = static_cast<double>(i % 7) * 0.5 - 1.25;
    return Tensor<double>({2, 3, 2, 2}, v);
}

double conv1x1_loop(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, std::size_t bi,
                    std::size_t o, std::size_t p) {
    const std::size_t C = x.shape()[1], P = x.shape()[2] * x.shape()[3];
    double acc = b.defined() ? b.data()[o] : 0.0;
    for (std::size_t c = 0; c < C; ++c) acc += w.data()[o * C + c] * x.data()[(bi * C + c) * P + p];
    return acc;
}

} // namespace

// conv2d_1x1 ---------------------------------------------------------------------

TEST(Conv1x1, IdentityWeightReturnsInput) {
    Rng rng(1);
    auto x = random_tensor<double>({2, 3, 4, 4}, rng);
    Tensor<double> w({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Tensor<double> b = Tensor<double>::zeros({3});
    EXPECT_EQ(values(conv2d_1x1(x, w, b)), values(x));
}

TEST(Conv1x1, ZeroWeightGivesBias) {
    Rng rng(2);
    auto x = random_tensor<double>({2, 5, 3, 3}, rng);
    auto y = conv2d_1x1(x, Tensor<double>::zeros({1, 5}), Tensor<double>({1}, {3.0}));
    for (double v : y.data()) EXPECT_EQ(v, 3.0);
}

TEST(Conv1x1, MatchesNestedLoopsAndFrozenValues) {
    auto x = small_input();
    Tensor<double> w({4, 3}, {0.3, -0.2, 0.5, 1.0, 0.0, -1.0, 0.25, 0.25, 0.25, -0.4, 0.1, 0.7});
    Tensor<double> b({4}, {0.1, -0.1, 0.0, 2.0});
    auto y = conv2d_1x1(x, w, b);
    ASSERT_EQ(y.shape(), (Shape{2, 4, 2, 2}));
    for (std::size_t bi = 0; bi < 2; ++bi)
        for (std::size_t o = 0; o < 4; ++o)
            for (std::size_t p = 0; p < 4; ++p)
                EXPECT_NEAR(y.data()[(bi * 4 + o) * 4 + p], conv1x1_loop(x, w, b, bi, o, p), 1e-14);
    const std::vector<double> frozen{-0.8, -0.5, -0.2, 0.8, -0.6, -0.6, -0.6, -0.6};
    for (std::size_t i = 0; i < frozen.size(); ++i) EXPECT_NEAR(y.data()[i], frozen[i], 1e-14);
    EXPECT_NEAR(y.data()[31], 2.25, 1e-14);
}

TEST(Conv1x1, ShapeMismatchIsDimensionError) {
    auto x = small_input();
    EXPECT_THROW(conv2d_1x1(x, Tensor<double>::zeros({2, 4}), Tensor<double>()), DimensionError);
}

TEST(Conv1x1, IsLinear) {
    Rng rng(3);
    auto w = random_tensor<double>({4, 3}, rng);
    auto x = random_tensor<double>({2, 3, 3, 3}, rng);
    auto y = random_tensor<double>({2, 3, 3, 3}, rng);
    const double a = 1.7, c = -0.4;
    auto lhs = conv2d_1x1(add(mul_scalar(x, a), mul_scalar(y, c)), w, Tensor<double>());
    auto rhs = add(mul_scalar(conv2d_1x1(x, w, Tensor<double>()), a), mul_scalar(conv2d_1x1(y, w, Tensor<double>()), c));
    expect_all_near(values(lhs), values(rhs), 1e-5);
}

// conv1d --------------------------------------------------------------------------

TEST(Conv1d, CenterTapIsIdentity) {
    Rng rng(4);
    auto x = random_tensor<double>({2, 1, 9}, rng);
    EXPECT_EQ(values(conv1d(x, Tensor<double>({1, 1, 3}, {0, 1, 0}))), values(x));
}

TEST(Conv1d, OnesKernelOnOnesShowsZeroPadding) {
    auto y = conv1d(Tensor<double>::full({1, 1, 6}, 1.0), Tensor<double>::full({1, 1, 3}, 1.0));
    EXPECT_EQ(values(y), (std::vector<double>{2, 3, 3, 3, 3, 2}));
}

TEST(Conv1d, MatchesFrozenCrossCorrelation) {
    Tensor<double> x({1, 1, 7}, {0.5, -1.0, 2.0, 0.25, -0.75, 1.5, 3.0});
    auto y = conv1d(x, Tensor<double>({1, 1, 3}, {0.2, -0.5, 0.3}));
    expect_all_near(values(y), {-0.55, 1.2, -1.125, 0.05, 0.875, 0.0, -1.2}, 1e-14);
}

TEST(Conv1d, EvenWidthIsConfigError) {
    EXPECT_THROW(conv1d(Tensor<double>::zeros({1, 1, 5}), Tensor<double>::zeros({1, 1, 2})), ConfigError);
}

// batch norm ------------------------------------------------------------------------

TEST(BatchNorm, StandardizedInputIsFixedPoint) {
    // Per channel: values -a, +a repeated, so mean 0 and biased variance a^2 = 1.
    std::vector<double> v;
    for (int c = 0; c < 2; ++c)
        for (int i = 0; i < 8; ++i) v.push_back(i % 2 ? 1.0 : -1.0);
    Tensor<double> x({1, 2, 2, 4}, v);
    BatchNormState<double> st(2);
    auto y = batch_norm(x, Tensor<double>::full({2}, 1.0), Tensor<double>::zeros({2}), st, true);
    expect_all_near(values(y), v, 1e-4);
}

TEST(BatchNorm, ZeroGammaGivesBeta) {
    Rng rng(5);
    auto x = random_tensor<double>({3, 2, 4, 4}, rng);
    BatchNormState<double> st(2);
    auto y = batch_norm(x, Tensor<double>::zeros({2}), Tensor<double>::full({2}, 5.0), st, true);
    for (double v : y.data()) EXPECT_EQ(v, 5.0);
}

TEST(BatchNorm, OutputStatisticsAreStandard) {
    Rng rng(6);
    auto x = random_tensor<double>({4, 3, 5, 5}, rng, -3.0, 7.0);
    BatchNormState<double> st(3);
    auto y = batch_norm(x, Tensor<double>::full({3}, 1.0), Tensor<double>::zeros({3}), st, true);
    for (std::size_t c = 0; c < 3; ++c) {
        double s = 0, ss = 0;
        std::size_t n = 0;
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t p = 0; p < 25; ++p) {
                const double v = y.data()[(b * 3 + c) * 25 + p];
                s += v;
                ss += v * v;
                ++n;
            }
        const double mean = s / n, var = ss / n - mean * mean;
        EXPECT_LT(std::abs(mean), 1e-5);
        EXPECT_NEAR(var, 1.0, 1e-3);
    }
}

TEST(BatchNorm, RunningStatsAndEvalMode) {
    Tensor<double> x({2, 1, 1, 2}, {1.0, 2.0, 3.0, 6.0});
    BatchNormState<double> st(1);
    batch_norm(x, Tensor<double>::full({1}, 1.0), Tensor<double>::zeros({1}), st, true);
    // mean 3, unbiased variance 14/3; momentum 0.1 from (0, 1).
    EXPECT_NEAR(st.running_mean.data()[0], 0.3, 1e-15);
    EXPECT_NEAR(st.running_var.data()[0], 0.9 + 0.1 * 14.0 / 3.0, 1e-15);
    auto y = batch_norm(Tensor<double>({1, 1, 1, 1}, {2.0}), Tensor<double>::full({1}, 2.0),
                        Tensor<double>::full({1}, 0.5), st, false);
    EXPECT_NEAR(y.item(), 2.0 * (2.0 - 0.3) / std::sqrt(st.running_var.data()[0] + 1e-5) + 0.5, 1e-14);
}

TEST(BatchNorm, SingleValueTrainingIsRejected) {
    BatchNormState<double> st(2);
    EXPECT_THROW(batch_norm(Tensor<double>::zeros({1, 2, 1, 1}), Tensor<double>::full({2}, 1.0),
                            Tensor<double>::zeros({2}), st, true),
                 ValidationError);
}

// bilinear resize -------------------------------------------------------------------

TEST(BilinearResize, SameSizeIsTheSameTensor) {
    Rng rng(7);
    auto x = random_tensor<double>({1, 2, 4, 4}, rng);
    auto y = bilinear_resize(x, 4, 4);
    EXPECT_TRUE(y.same_storage(x));
    EXPECT_EQ(values(y), values(x));
}

TEST(BilinearResize, ConstantStaysConstant) {
    auto x = Tensor<double>::full({1, 1, 3, 5}, 0.7);
    for (auto [h, w] : {std::pair{7, 2}, std::pair{1, 1}, std::pair{12, 20}}) {
        const auto y = bilinear_resize(x, h, w);
        for (double v : y.data()) EXPECT_NEAR(v, 0.7, 1e-15);
    }
}

TEST(BilinearResize, HalfPixelUpsampleOfTwoByTwo) {
    Tensor<double> x({1, 1, 2, 2}, {0, 1, 2, 3});
    auto y = bilinear_resize(x, 4, 4);
    // Sample positions -0.25, 0.25, 0.75, 1.25 clamp to 0, .25, .75, 1 and the
    // field is x + 2 y.
    expect_all_near(values(y),
                    {0.0, 0.25, 0.75, 1.0, 0.5, 0.75, 1.25, 1.5, 1.5, 1.75, 2.25, 2.5, 2.0, 2.25, 2.75, 3.0}, 1e-15);
}

// global pooling --------------------------------------------------------------------

TEST(GlobalPool, ConstantInput) {
    auto x = Tensor<double>::full({2, 3, 4}, -1.5);
    for (auto kind : {PoolKind::avg, PoolKind::max}) {
        const auto y = global_pool(x, 1, kind);
        for (double v : y.data()) EXPECT_EQ(v, -1.5);
    }
}

TEST(GlobalPool, AvgAndMaxOfRamp) {
    Tensor<double> x({1, 4}, {1, 2, 3, 4});
    EXPECT_EQ(global_pool(x, 1, PoolKind::avg).item(), 2.5);
    EXPECT_EQ(global_pool(x, 1, PoolKind::max).item(), 4.0);
}

TEST(GlobalPool, MatchesSequentialFold) {
    Rng rng(8);
    auto x = random_tensor<double>({2, 5, 3}, rng);
    auto avg = global_pool(x, 1, PoolKind::avg);
    auto mx = global_pool(x, 1, PoolKind::max);
    ASSERT_EQ(avg.shape(), (Shape{2, 1, 3}));
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t n = 0; n < 3; ++n) {
            double s = 0, m = -INFINITY;
            for (std::size_t c = 0; c < 5; ++c) {
                const double v = x.data()[(b * 5 + c) * 3 + n];
                s += v;
                m = std::max(m, v);
            }
            EXPECT_NEAR(avg.data()[b * 3 + n], s / 5, 1e-15);
            EXPECT_EQ(mx.data()[b * 3 + n], m);
        }
}

TEST(GlobalPool, MaxGradientGoesToFirstMaximum) {
    auto x = leaf(Tensor<double>({1, 4}, {2, 5, 5, 1}));
    sum(global_pool(x, 1, PoolKind::max)).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 0, 0}));
}

// grad check harness ----------------------------------------------------------------

TEST(GradCheck, SquareAtThree) {
    auto theta = leaf(Tensor<double>({1}, {3.0}));
    std::vector<Parameter<double>> params{{"theta", theta}};
    theta.zero_grad();
    auto f = [&] { return sum(mul(theta, theta)); };
    f().backward();
    EXPECT_NEAR(theta.grad()[0], 6.0, 1e-12);
    const auto report = grad_check<double>(f, params);
    EXPECT_NEAR(report.entries[0].numeric, 6.0, 1e-6);
    EXPECT_LT(report.max_rel_error(), 1e-6);
}

TEST(GradCheck, SigmoidSlopeAtZero) {
    auto theta = leaf(Tensor<double>::zeros({5}));
    sum(sigmoid(theta)).backward();
    for (double g : theta.grad()) EXPECT_NEAR(g, 0.25, 1e-15);
}

TEST(GradCheck, NonFiniteProbeIsNumericError) {
    // log-like blowup: 1 / theta crosses zero within the probe step.
    auto theta = leaf(Tensor<double>({1}, {0.0}));
    std::vector<Parameter<double>> params{{"theta", theta}};
    auto f = [&] { return sum(div(Tensor<double>({1}, {1.0}), add_scalar(theta, 1e-6))); };
    GradCheckOptions o;
    o.eps = 1e-6;
    EXPECT_THROW(grad_check<double>(f, params, o), NumericError);
}

namespace {

// Random-shape property check of one op: reverse mode vs central differences.
template <typename Build>
void op_grad_property(const char* name, Build build, int trials = 100) {
    for (int t = 0; t < trials; ++t) {
        Rng rng(stream_seed(99, std::hash<std::string>{}(name), static_cast<std::uint64_t>(t)));
        std::vector<Parameter<double>> params;
        std::function<Tensor<double>()> f = build(rng, params);
        const auto report = grad_check<double>(f, params);
        ASSERT_LT(report.max_rel_error(), 1e-5) << name << " trial " << t << " worst " << report.worst().name;
    }
}

std::size_t dim(Rng& rng, std::size_t lo, std::size_t hi) { return lo + rng.below(hi - lo + 1); }

} // namespace

TEST(OpGradients, RandomShapesMatchFiniteDifferences) {
    op_grad_property("conv1x1", [](Rng& rng, std::vector<Parameter<double>>& p) {
        const std::size_t B = dim(rng, 1, 2), C = dim(rng, 1, 3), O = dim(rng, 1, 3), H = dim(rng, 1, 3);
        auto x = leaf(random_tensor<double>({B, C, H, 2}, rng));
        auto w = leaf(random_tensor<double>({O, C}, rng));
        auto b = leaf(random_tensor<double>({O}, rng));
        auto r = random_tensor<double>({B, O, H, 2}, rng);
        p = {{"x", x}, {"w", w}, {"b", b}};
        return std::function<Tensor<double>()>([=] { return sum(mul(conv2d_1x1(x, w, b), r)); });
    });
    op_grad_property("conv1d", [](Rng& rng, std::vector<Parameter<double>>& p) {
        const std::size_t B = dim(rng, 1, 2), L = dim(rng, 3, 9), k = 2 * dim(rng, 0, 2) + 1;
        auto x = leaf(random_tensor<double>({B, 1, L}, rng));
        auto w = leaf(random_tensor<double>({1, 1, k}, rng));
        auto r = random_tensor<double>({B, 1, L}, rng);
        p = {{"x", x}, {"w", w}};
        return std::function<Tensor<double>()>([=] { return sum(mul(conv1d(x, w), r)); });
    });
    op_grad_property("batchnorm", [](Rng& rng, std::vector<Parameter<double>>& p) {
        const std::size_t B = dim(rng, 2, 3), C = dim(rng, 1, 3), H = dim(rng, 1, 3);
        auto x = leaf(random_tensor<double>({B, C, H, 2}, rng));
        auto g = leaf(random_tensor<double>({C}, rng, 0.5, 1.5));
        auto b = leaf(random_tensor<double>({C}, rng));
        auto r = random_tensor<double>({B, C, H, 2}, rng);
        p = {{"x", x}, {"gamma", g}, {"beta", b}};
        return std::function<Tensor<double>()>([=] {
            BatchNormState<double> st(C);
            return sum(mul(batch_norm(x, g, b, st, true), r));
        });
    });
    op_grad_property("sigmoid_relu", [](Rng& rng, std::vector<Parameter<double>>& p) {
        const std::size_t n = dim(rng, 1, 12);
        auto x = leaf(random_tensor<double>({n}, rng, -2.0, 2.0));
        auto r = random_tensor<double>({n}, rng);
        p = {{"x", x}};
        return std::function<Tensor<double>()>([=] { return sum(mul(relu(add(sigmoid(x), x)), r)); });
    });
    op_grad_property("bilinear", [](Rng& rng, std::vector<Parameter<double>>& p) {
        const std::size_t H = dim(rng, 1, 4), W = dim(rng, 1, 4), oh = dim(rng, 1, 7), ow = dim(rng, 1, 7);
        auto x = leaf(random_tensor<double>({1, 2, H, W}, rng));
        auto r = random_tensor<double>({1, 2, oh, ow}, rng);
        p = {{"x", x}};
        return std::function<Tensor<double>()>([=] { return sum(mul(bilinear_resize(x, oh, ow), r)); });
    });
    op_grad_property("pool", [](Rng& rng, std::vector<Parameter<double>>& p) {
        const std::size_t B = dim(rng, 1, 2), C = dim(rng, 1, 5), N = dim(rng, 1, 6);
        auto x = leaf(random_tensor<double>({B, C, N}, rng));
        auto r1 = random_tensor<double>({B, 1, N}, rng);
        auto r2 = random_tensor<double>({B, 1, N}, rng);
        p = {{"x", x}};
        return std::function<Tensor<double>()>([=] {
            return add(sum(mul(global_pool(x, 1, PoolKind::avg), r1)), sum(mul(global_pool(x, 1, PoolKind::max), r2)));
        });
    });
}

// tensor plumbing ------------------------------------------------------------------

TEST(Tensor, NonFiniteResultIsNumericError) {
    Tensor<double> a({2}, {1.0, 0.0});
    EXPECT_THROW(div(Tensor<double>({2}, {1.0, 1.0}), a), NumericError);
}

TEST(Tensor, SigmoidAndReluRanges) {
    Rng rng(12);
    auto x = random_tensor<double>({1000}, rng, -30.0, 30.0);
    const auto s = sigmoid(x), r = relu(x);
    for (double v : s.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 1.0);
    }
    for (double v : r.data()) EXPECT_GE(v, 0.0);
}

TEST(Parameters, DuplicateNamesAndTensorsAreRejected) {
    ParameterStore<double> s;
    auto t = s.add("a", Tensor<double>::zeros({2}));
    EXPECT_THROW(s.add("a", Tensor<double>::zeros({2})), ValidationError);
    EXPECT_THROW(s.add("b", t), ValidationError);
    EXPECT_EQ(s.count(), 2u);
}

TEST(Atns, HeaderLayoutAndRoundTrip) {
    Tensor<float> t({2, 3}, {1, 2, 3, 4, 5, 6.5f});
    std::stringstream ss;
    write_atns(ss, t);
    const std::string bytes = ss.str();
    ASSERT_EQ(bytes.size(), 4u + 1 + 1 + 4 + 2 * 8 + 6 * 4);
    EXPECT_EQ(bytes.substr(0, 4), "ATNS");
    EXPECT_EQ(bytes[4], 1);           // version
    EXPECT_EQ(bytes[5], 0);           // f32
    EXPECT_EQ(bytes[6], 2);           // rank, little-endian u32
    EXPECT_EQ(bytes[10], 2);          // first extent, little-endian u64
    EXPECT_EQ(bytes[18], 3);
    const StoredTensor back = read_atns(ss);
    EXPECT_EQ(back.dtype, DType::f32);
    EXPECT_EQ(back.shape, (Shape{2, 3}));
    EXPECT_EQ(back.values, (std::vector<double>{1, 2, 3, 4, 5, 6.5}));
}

TEST(Atns, BadMagicIsIoError) {
    std::stringstream ss("NOPE....");
    EXPECT_THROW(read_atns(ss), IoError);
}
