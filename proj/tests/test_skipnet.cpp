#include <gtest/gtest.h>

#include <cmath>

#include "skipgraph/grad_check.hpp"
#include "skipgraph/losses.hpp"
#include "test_util.hpp"

using namespace skipgraph;
using namespace testutil;

namespace {

ModelConfig tiny(std::size_t size = 32) {
    ModelConfig c;
    c.input_h = c.input_w = size;
    c.encoder_channels = {4, 6, 6, 8};
    c.reduced_channels = 3;
    c.target_shift = 2;
    c.k_neighbors = 3;
    c.select_m = 5;
    return c;
}

template <Real T>
std::vector<T> square_mask(std::size_t B, std::size_t H, std::size_t W) {
    std::vector<T> m(B * H * W, T(0));
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t y = H / 4 + b; y < 3 * H / 4; ++y)
            for (std::size_t x = W / 3; x < 3 * W / 4 - b; ++x) m[(b * H + y) * W + x] = T(1);
    return m;
}

// Closed-form parameter count, layer by layer.
std::size_t expected_params(const ModelConfig& c) {
    const auto& ch = c.encoder_channels;
    const std::size_t cr = c.reduced_channels;
    std::size_t n = 27 * ch[0] + 2 * ch[0] + 9 * ch[0] * ch[0] + 2 * ch[0];
    std::size_t prev = ch[0];
    for (std::size_t i = 0; i < 4; ++i) {
        n += 9 * prev * ch[i] + 2 * ch[i] + 9 * ch[i] * ch[i] + 2 * ch[i];
        prev = ch[i];
    }
    for (std::size_t i = 0; i < 4; ++i) n += ch[i] * cr + cr;
    if (c.skip != SkipMode::plain) {
        const std::size_t C = c.skip == SkipMode::single ? cr : 4 * cr;
        const std::size_t h = c.ffn_hidden ? c.ffn_hidden : C;
        const std::size_t N = c.target_h() * c.target_w();
        std::size_t block = C * C + 2 * C          // pre conv + BN
                            + C * N                // positional table
                            + 2 * C * C + C        // update
                            + C * C + 2 * C        // post conv + BN
                            + C * h + 2 * h + h * C + 2 * C; // FFN
        if (c.node_attention) block += c.conv1d_width;
        const std::size_t m = c.skip == SkipMode::single ? std::min(c.select_m, cr) : c.select_m;
        n += c.repetitions * (block + m + 1);
    }
    n += 3 * (9 * 2 * cr * cr + 2 * cr + 9 * cr * cr + 2 * cr);
    n += 8 * (cr + 1);
    return n;
}

} // namespace

// config ------------------------------------------------------------------------

TEST(ModelConfig, RejectsBadValues) {
    auto c = tiny();
    c.input_h = 48;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    c.select_m = 13; // 4 C_r = 12
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    c.k_neighbors = 16; // 8x8 grid has 64 nodes; K d must stay below
    c.dilation = 4;
    EXPECT_THROW(c.validate(), ConfigError);
    c = tiny();
    c.target_shift = 6;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(tiny().with_setting("S9"), ConfigError);
}

TEST(ModelConfig, SettingsMapToSkipModes) {
    const auto c = tiny();
    EXPECT_EQ(c.with_setting("S0").skip, SkipMode::plain);
    EXPECT_EQ(c.with_setting("S1").skip, SkipMode::single);
    EXPECT_FALSE(c.with_setting("S1").node_attention);
    EXPECT_TRUE(c.with_setting("S2").node_attention);
    EXPECT_EQ(c.with_setting("S3").skip, SkipMode::cross);
    EXPECT_FALSE(c.with_setting("S3").node_attention);
    EXPECT_TRUE(c.with_setting("S4").node_attention);
}

// encode / preprocess / postprocess / decode -------------------------------------------

TEST(SkipNet, PyramidShapesFor64) {
    ModelConfig c;
    c.reduced_channels = 4;
    c.select_m = 8;
    SkipNet<double> net(c);
    auto pyr = net.encode(Tensor<double>::zeros({2, 3, 64, 64}), true);
    EXPECT_EQ(pyr.stages[0].shape(), (Shape{2, 16, 16, 16}));
    EXPECT_EQ(pyr.stages[1].shape(), (Shape{2, 32, 8, 8}));
    EXPECT_EQ(pyr.stages[2].shape(), (Shape{2, 64, 4, 4}));
    EXPECT_EQ(pyr.stages[3].shape(), (Shape{2, 128, 2, 2}));
    for (const auto& s : pyr.stages)
        for (double v : s.data()) EXPECT_TRUE(std::isfinite(v));
}

TEST(SkipNet, IndivisibleInputIsConfigError) {
    SkipNet<double> net(tiny());
    EXPECT_THROW(net.encode(Tensor<double>::zeros({1, 3, 40, 32}), false), ConfigError);
}

TEST(SkipNet, ParameterCountMatchesClosedForm) {
    for (const char* s : {"S0", "S1", "S2", "S3", "S4"}) {
        auto c = tiny().with_setting(s);
        SkipNet<double> net(c);
        EXPECT_EQ(net.store().count(), expected_params(c)) << s;
    }
    auto c = tiny();
    c.repetitions = 3;
    c.ffn_hidden = 7;
    SkipNet<double> net(c);
    EXPECT_EQ(net.store().count(), expected_params(c));
}

TEST(SkipNet, PreprocessResolutionFixAndConcatOrder) {
    auto c = tiny(64);
    c.target_shift = 3; // 8x8: stage 2 is already there
    SkipNet<double> net(c);
    Rng rng(70);
    auto pre = net.preprocess(net.encode(random_tensor<double>({2, 3, 64, 64}, rng), true));
    EXPECT_TRUE(pre.resized[1].same_storage(pre.reduced[1]));
    EXPECT_EQ(pre.fused.shape(), (Shape{2, 12, 8, 8}));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(values(slice(pre.fused, 1, 3 * i, 3 * i + 3)), values(pre.resized[i]));
}

TEST(SkipNet, FusedWidthIsFourReducedChannels) {
    ModelConfig c;
    EXPECT_EQ(c.reduced_channels, 64u);
    EXPECT_EQ(c.fused_channels(), 256u);
}

TEST(SkipNet, ZeroBranchLeavesStageResidualsExactly) {
    SkipNet<double> net(tiny(64));
    Rng rng(71);
    auto pre = net.preprocess(net.encode(random_tensor<double>({2, 3, 64, 64}, rng), true));
    auto out = postprocess(Tensor<double>::zeros(pre.fused.shape()), pre.reduced);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(values(out[i]), values(pre.reduced[i])) << "stage " << i;
}

TEST(SkipNet, PostprocessMatchesSplitResizeAdd) {
    Rng rng(72);
    std::array<Tensor<double>, 4> reduced{random_tensor<double>({1, 2, 8, 8}, rng),
                                          random_tensor<double>({1, 2, 4, 4}, rng),
                                          random_tensor<double>({1, 2, 2, 2}, rng),
                                          random_tensor<double>({1, 2, 1, 1}, rng)};
    auto fused = random_tensor<double>({1, 8, 4, 4}, rng);
    auto out = postprocess(fused, reduced);
    for (std::size_t i = 0; i < 4; ++i) {
        const std::size_t h = reduced[i].shape()[2];
        // Slab i resized by hand: 4x4 -> h x h with half-pixel centres.
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < h; ++x) {
                    auto src = [&](double p) { return std::clamp((p + 0.5) * 4.0 / h - 0.5, 0.0, 3.0); };
                    const double sy = src(y), sx = src(x);
                    const std::size_t y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
                    const std::size_t y1 = std::min<std::size_t>(y0 + 1, 3), x1 = std::min<std::size_t>(x0 + 1, 3);
                    const double fy = sy - y0, fx = sx - x0;
                    auto at = [&](std::size_t yy, std::size_t xx) { return fused.data()[((2 * i + c) * 4 + yy) * 4 + xx]; };
                    const double v = (1 - fy) * ((1 - fx) * at(y0, x0) + fx * at(y0, x1)) +
                                     fy * ((1 - fx) * at(y1, x0) + fx * at(y1, x1));
                    const std::size_t k = (c * h + y) * h + x;
                    EXPECT_NEAR(out[i].data()[k], reduced[i].data()[k] + v, 1e-14);
                }
    }
    // A slab already at the stage size is added without resampling.
    EXPECT_EQ(out[1].data()[5], reduced[1].data()[5] + fused.data()[(2 * 4 + 1) * 4 + 1]);
}

TEST(SkipNet, DecoderResolutionsAndWidths) {
    SkipNet<double> net(tiny(64));
    Rng rng(73);
    ForwardTrace<double> tr;
    net.forward(random_tensor<double>({2, 3, 64, 64}, rng), true, &tr);
    const std::size_t sizes[4] = {2, 4, 8, 16};
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(tr.decoder[i].shape(), (Shape{2, 3, sizes[i], sizes[i]}));
}

// forward ---------------------------------------------------------------------------

TEST(SkipNet, OutputsAreProbabilitiesAtFullResolution) {
    for (const char* s : {"S0", "S1", "S2", "S3", "S4"}) {
        SkipNet<double> net(tiny().with_setting(s));
        Rng rng(74);
        auto out = net.forward(random_tensor<double>({2, 3, 32, 32}, rng, 0, 1), true);
        for (std::size_t i = 0; i < 4; ++i)
            for (const auto* t : {&out.region[i], &out.boundary[i]}) {
                EXPECT_EQ(t->shape(), (Shape{2, 1, 32, 32})) << s;
                for (double v : t->data()) {
                    ASSERT_GT(v, 0.0) << s;
                    ASSERT_LT(v, 1.0) << s;
                }
            }
    }
}

TEST(SkipNet, FixedSeedIsBitIdentical) {
    Rng rng(75);
    auto x = random_tensor<double>({2, 3, 32, 32}, rng, 0, 1);
    SkipNet<double> a(tiny()), b(tiny());
    auto oa = a.forward(x, true), ob = b.forward(x, true);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(values(oa.region[i]), values(ob.region[i]));
        EXPECT_EQ(values(oa.boundary[i]), values(ob.boundary[i]));
    }
}

TEST(SkipNet, PlainSettingMatchesHandBuiltSkipNetwork) {
    SkipNet<double> net(tiny().with_setting("S0"));
    Rng rng(76);
    auto x = random_tensor<double>({2, 3, 32, 32}, rng, 0, 1);
    auto out = net.forward(x, false);
    auto pre = net.preprocess(net.encode(x, false));
    auto manual = net.heads(net.decode(postprocess(pre.fused, pre.reduced), false));
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(values(out.region[i]), values(manual.region[i]));
}

TEST(SkipNet, SingleScaleBranchLeavesOtherSlabsAlone) {
    SkipNet<double> net(tiny().with_setting("S2"));
    Rng rng(77);
    ForwardTrace<double> tr;
    net.forward(random_tensor<double>({2, 3, 32, 32}, rng), true, &tr);
    EXPECT_EQ(values(slice(tr.skip_out, 1, 0, 9)), values(slice(tr.pre.fused, 1, 0, 9)));
    EXPECT_NE(values(slice(tr.skip_out, 1, 9, 12)), values(slice(tr.pre.fused, 1, 9, 12)));
}

TEST(SkipNet, NoNonFiniteOutputsOnRandomInputs) {
    auto c = tiny();
    c.encoder_channels = {2, 2, 2, 2};
    c.reduced_channels = 2;
    c.select_m = 4;
    SkipNet<double> net(c);
    Rng rng(78);
    for (int t = 0; t < 1000; ++t) {
        const double scale = std::pow(10.0, rng.uniform(-3, 3));
        auto out = net.forward(random_tensor<double>({2, 3, 32, 32}, rng, -scale, scale), t % 2 == 0);
        for (std::size_t i = 0; i < 4; ++i)
            for (double v : out.region[i].data()) ASSERT_TRUE(std::isfinite(v) && v > 0 && v < 1) << "trial " << t;
    }
}

// gradients -------------------------------------------------------------------------------

namespace {

template <Real T>
GradCheckReport model_grad_check(const ModelConfig& c, double eps, double abs_floor, bool directional) {
    SkipNet<T> net(c);
    SkipNet<long double> ref(c);
    const std::size_t B = 2, H = c.input_h, W = c.input_w;
    Rng rng(79);
    std::vector<double> img(B * 3 * H * W);
    for (auto& v : img) v = rng.uniform();
    const auto m = square_mask<double>(B, H, W);
    Tensor<T> x({B, 3, H, W}, std::vector<T>(img.begin(), img.end()));
    auto tg = make_targets(Tensor<T>({B, 1, H, W}, std::vector<T>(m.begin(), m.end())));
    Tensor<long double> xr({B, 3, H, W}, std::vector<long double>(img.begin(), img.end()));
    auto tgr = make_targets(Tensor<long double>({B, 1, H, W}, std::vector<long double>(m.begin(), m.end())));
    GradCheckOptions o;
    o.max_probes_per_param = 4;
    o.stencil = 4;
    o.eps = eps;
    o.abs_floor = abs_floor;
    o.directional = directional;
    return grad_check_with_reference<T, long double>(
        [&] { return total_loss(net.forward(x, true), tg); }, net.store().params(),
        [&] { return total_loss(ref.forward(xr, true), tgr); }, ref.store().params(), o);
}

} // namespace

TEST(SkipNetGradients, FullModelInDouble) {
    for (const char* s : {"S1", "S4"}) {
        // Some encoder gradients are ~1e-9 and carry ~1e-13 of cancellation
        // error from the analytic sum; the floor measures those against the
        // loss scale instead of their own size.
        const auto r = model_grad_check<double>(tiny().with_setting(s), 1e-5, 1e-6, true);
        EXPECT_LT(r.max_rel_error(), 1e-5) << s << " " << r.worst().name;
    }
}

TEST(SkipNetGradients, FullModelInFloat) {
    // Elementwise probes only: a +-1 direction sums hundreds of f32 terms and
    // its cancellation swamps the comparison.
    const auto r = model_grad_check<float>(tiny(), 1e-3, 1e-8, false);
    EXPECT_LT(r.max_rel_error(), 1e-2) << r.worst().name;
}
