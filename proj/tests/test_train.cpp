#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

#include "skipgraph/train.hpp"

using namespace skipgraph;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_run(const fs::path& out, std::size_t epochs = 3) {
    RunConfig c;
    c.seed = 4;
    c.precision = Precision::f64;
    c.model.input_h = c.model.input_w = 32;
    c.model.encoder_channels = {4, 6, 6, 8};
    c.model.reduced_channels = 3;
    c.model.target_shift = 2;
    c.model.k_neighbors = 3;
    c.model.select_m = 5;
    c.train.epochs = epochs;
    c.train.batch_size = 4;
    c.train.optim.lr = 1e-3;
    c.output = out;
    return c;
}

std::vector<Sample> corpus(std::size_t count, std::uint64_t stream) {
    SynthSpec s;
    s.count = count;
    s.height = s.width = 32;
    s.seed = 11;
    s.stream = stream;
    return generate(s);
}

fs::path scratch(const std::string& name) {
    auto p = fs::temp_directory_path() / ("skipgraph_train_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

} // namespace

// learning-rate schedule ---------------------------------------------------------------

TEST(CosineLr, EndpointsAndFormula) {
    OptimConfig o;
    o.lr = 1e-3;
    o.lr_min = 1e-5;
    EXPECT_DOUBLE_EQ(cosine_lr(o, 0, 10), 1e-3);
    EXPECT_DOUBLE_EQ(cosine_lr(o, 5, 10), 0.5 * (1e-3 + 1e-5));
    double prev = INFINITY;
    for (std::size_t e = 0; e < 60; ++e) {
        const double want = 1e-5 + (1e-3 - 1e-5) * (1 + std::cos(std::numbers::pi * double(e) / 60)) / 2;
        EXPECT_NEAR(cosine_lr(o, e, 60), want, 1e-18);
        EXPECT_LT(cosine_lr(o, e, 60), prev);
        prev = cosine_lr(o, e, 60);
    }
    EXPECT_GT(cosine_lr(o, 59, 60), o.lr_min);
    EXPECT_THROW(cosine_lr(o, 0, 0), ConfigError);
}

// Adam -----------------------------------------------------------------------------

TEST(Adam, MatchesHandRolledUpdates) {
    ParameterStore<double> store;
    auto w = store.add("w", Tensor<double>({3}, std::vector<double>{1.0, -2.0, 0.5}));
    OptimConfig cfg;
    Adam<double> adam(store, cfg);
    const std::vector<double> coef{3.0, 0.5, -1e-3};

    std::vector<double> x{1.0, -2.0, 0.5}, m(3, 0.0), v(3, 0.0);
    for (int t = 1; t <= 5; ++t) {
        // loss = sum(c * w^2) so the gradient depends on the iterate.
        store.zero_grad();
        sum(mul(mul(w, w), Tensor<double>({3}, coef))).backward();
        const double lr = 1e-2 / t;
        adam.step(lr);
        for (std::size_t i = 0; i < 3; ++i) {
            const double g = 2 * coef[i] * x[i];
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            const double mh = m[i] / (1 - std::pow(0.9, t)), vh = v[i] / (1 - std::pow(0.999, t));
            x[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
            EXPECT_NEAR(w.data()[i], x[i], 1e-15) << "step " << t;
        }
    }
    EXPECT_EQ(adam.steps(), 5u);
    const auto st = adam.state();
    ASSERT_EQ(st.size(), 2u);
    EXPECT_EQ(st[0].name, "adam.m.w");
    EXPECT_EQ(st[1].name, "adam.v.w");
}

TEST(Adam, SkipsParametersWithoutGradient) {
    ParameterStore<double> store;
    auto a = store.add("a", Tensor<double>({1}, std::vector<double>{1.0}));
    auto b = store.add("b", Tensor<double>({1}, std::vector<double>{2.0}));
    Adam<double> adam(store, OptimConfig{});
    store.zero_grad();
    sum(a).backward();
    adam.step(0.1);
    EXPECT_NEAR(a.data()[0], 0.9, 1e-9);
    EXPECT_EQ(b.data()[0], 2.0);
}

// Trainer --------------------------------------------------------------------------

TEST(Trainer, RejectsBadSetups) {
    const auto train = corpus(4, 0);
    auto cfg = tiny_run(scratch("bad"));
    cfg.train.batch_size = 1;
    EXPECT_THROW(Trainer<double>(cfg, train, nullptr), ConfigError);
    cfg = tiny_run(scratch("bad"));
    const std::vector<Sample> one(train.begin(), train.begin() + 1);
    EXPECT_THROW(Trainer<double>(cfg, one, nullptr), ConfigError);
    cfg.model.input_h = cfg.model.input_w = 64;
    EXPECT_THROW(Trainer<double>(cfg, train, nullptr), ConfigError);
}

TEST(Trainer, EpochOrderIsAPermutationKeyedBySeedAndEpoch) {
    const auto train = corpus(10, 0);
    const auto cfg = tiny_run(scratch("order"));
    Trainer<double> a(cfg, train, nullptr), b(cfg, train, nullptr);
    for (std::size_t e = 0; e < 3; ++e) {
        auto o = a.epoch_order(e);
        EXPECT_EQ(o, b.epoch_order(e));
        std::sort(o.begin(), o.end());
        for (std::size_t i = 0; i < o.size(); ++i) EXPECT_EQ(o[i], i);
    }
    EXPECT_NE(a.epoch_order(0), a.epoch_order(1));
}

TEST(Trainer, StepsReduceLossOnAFixedBatch) {
    const auto train = corpus(4, 0);
    auto cfg = tiny_run(scratch("overfit"));
    cfg.train.optim.lr = 3e-3;
    Trainer<double> t(cfg, train, nullptr);
    std::vector<const Sample*> batch{&train[0], &train[1], &train[2], &train[3]};
    const double first = t.step(batch, 3e-3).total;
    double last = first;
    for (int i = 0; i < 30; ++i) last = t.step(batch, 3e-3).total;
    EXPECT_TRUE(std::isfinite(last));
    EXPECT_LT(last, 0.8 * first);
    EXPECT_EQ(t.steps(), 31u);
}

TEST(Trainer, EpochLogCountsStepsAndValidates) {
    const auto train = corpus(10, 0), val = corpus(3, 1);
    auto cfg = tiny_run(scratch("epoch"), 2);
    Trainer<double> t(cfg, train, &val);
    const auto log = t.train_epoch();
    EXPECT_EQ(log.epoch, 0u);
    EXPECT_EQ(log.steps, 3u); // ceil(10 / 4)
    EXPECT_DOUBLE_EQ(log.lr, cfg.train.optim.lr);
    EXPECT_NEAR(log.total, log.wiou + log.wbce + log.boundary, 1e-12);
    ASSERT_TRUE(log.val.has_value());
    EXPECT_EQ(log.val->images, 3u);
    t.train_epoch();
    EXPECT_TRUE(t.done());
    EXPECT_THROW(t.train_epoch(), ConfigError);
}

TEST(Trainer, NonFiniteInputAbortsWithDump) {
    auto train = corpus(4, 0);
    train[2].image[17] = std::nan("");
    const auto dir = scratch("nan");
    auto cfg = tiny_run(dir, 1);
    Trainer<double> t(cfg, train, nullptr);
    EXPECT_THROW(t.train_epoch(dir / "nan_dump"), NumericError);
    EXPECT_TRUE(fs::exists(dir / "nan_dump" / "info.json"));
    fs::remove_all(dir);
}

// checkpoints ----------------------------------------------------------------------

TEST(Checkpoint, SaveLoadRestoresWeightsAndManifest) {
    const auto train = corpus(4, 0);
    const auto dir = scratch("ckpt");
    const auto cfg = tiny_run(dir);
    Trainer<double> a(cfg, train, nullptr);
    a.train_epoch();
    a.set_best_dsc(0.25);
    a.save_checkpoint(dir / "snap");
    EXPECT_TRUE(fs::exists(dir / "snap.atns"));
    EXPECT_TRUE(fs::exists(dir / "snap.json"));

    const auto m = read_manifest(dir / "snap");
    EXPECT_EQ(m.precision, "f64");
    EXPECT_EQ(m.seed, 4u);
    EXPECT_EQ(m.epoch, 1u);
    EXPECT_EQ(m.step, 1u);
    EXPECT_EQ(m.best_dsc, 0.25);
    EXPECT_EQ(m.model.reduced_channels, 3u);
    EXPECT_EQ(m.tool_version, kToolVersion);

    Trainer<double> b(cfg, train, nullptr);
    b.load_checkpoint(dir / "snap");
    EXPECT_EQ(b.epoch(), 1u);
    EXPECT_EQ(b.steps(), 1u);
    EXPECT_EQ(b.best_dsc(), 0.25);
    const auto& pa = a.model().store().params();
    const auto& pb = b.model().store().params();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t k = 0; k < pa.size(); ++k)
        for (std::size_t i = 0; i < pa[k].value.numel(); ++i)
            ASSERT_EQ(pa[k].value.data()[i], pb[k].value.data()[i]) << pa[k].name;

    SkipNet<double> net(cfg.model);
    load_weights(net, dir / "snap");
    EXPECT_EQ(net.store().params()[0].value.data()[0], pa[0].value.data()[0]);
    fs::remove_all(dir);
}

TEST(Checkpoint, MismatchesAreManifestErrors) {
    const auto train = corpus(4, 0);
    const auto dir = scratch("mismatch");
    const auto cfg = tiny_run(dir);
    Trainer<double> a(cfg, train, nullptr);
    a.save_checkpoint(dir / "snap");

    auto other = cfg;
    other.model.reduced_channels = 4;
    other.model.select_m = 6;
    SkipNet<double> wrong(other.model);
    EXPECT_THROW(load_weights(wrong, dir / "snap"), ManifestError);

    auto seed = cfg;
    seed.seed = 5;
    Trainer<double> b(seed, train, nullptr);
    EXPECT_THROW(b.load_checkpoint(dir / "snap"), ManifestError);
    Trainer<float> c(cfg, train, nullptr);
    EXPECT_THROW(c.load_checkpoint(dir / "snap"), ManifestError);

    EXPECT_THROW(read_manifest(dir / "absent"), ManifestError);
    std::ofstream(dir / "broken.json") << "{";
    EXPECT_THROW(read_manifest(dir / "broken"), ManifestError);
    fs::remove_all(dir);
}

// full runs ------------------------------------------------------------------------

TEST(Fit, WritesRunArtifacts) {
    const auto train = corpus(8, 0), val = corpus(4, 1);
    const auto dir = scratch("fit");
    std::size_t seen = 0;
    const auto r = fit<double>(tiny_run(dir, 2), train, val, false, [&](const EpochLog&) { ++seen; });
    EXPECT_EQ(r.epochs_run, 2u);
    EXPECT_EQ(seen, 2u);
    for (const char* f : {"config.yaml", "train_log.csv", "last.atns", "last.json", "best.atns", "best.json"})
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    std::ifstream log(dir / "train_log.csv");
    std::string line;
    std::size_t rows = 0;
    std::getline(log, line);
    EXPECT_EQ(line.substr(0, 15), "epoch,lr,steps,");
    while (std::getline(log, line)) rows += !line.empty();
    EXPECT_EQ(rows, 2u);
    EXPECT_EQ(read_manifest(dir / "best").best_dsc, r.best_dsc);
    fs::remove_all(dir);
}

TEST(Fit, DeterministicAndResumeIsBitExact) {
    const auto train = corpus(8, 0), val = corpus(4, 1);
    const auto a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
    fit<double>(tiny_run(a, 4), train, val, false);
    fit<double>(tiny_run(b, 4), train, val, false);
    EXPECT_EQ(slurp(a / "last.atns"), slurp(b / "last.atns"));
    EXPECT_EQ(slurp(a / "train_log.csv"), slurp(b / "train_log.csv"));

    // Interrupt after the second epoch, then resume.
    struct Stop {};
    EXPECT_THROW(fit<double>(tiny_run(c, 4), train, val, false,
                             [](const EpochLog& l) {
                                 if (l.epoch == 1) throw Stop{};
                             }),
                 Stop);
    EXPECT_EQ(read_manifest(c / "last").epoch, 2u);
    const auto r = fit<double>(tiny_run(c, 4), train, val, true);
    EXPECT_EQ(r.epochs_run, 2u);
    EXPECT_EQ(slurp(a / "last.atns"), slurp(c / "last.atns"));
    EXPECT_EQ(slurp(a / "best.atns"), slurp(c / "best.atns"));
    EXPECT_EQ(slurp(a / "train_log.csv"), slurp(c / "train_log.csv"));
    for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST(MetricsCsv, RowsAndMeanLine) {
    const auto dir = scratch("csv");
    write_metrics_csv(dir / "m.csv", {{1.0, 1.0, 0.0, 2.0}, {0.5, 0.25, 0.5, std::nullopt}});
    std::ifstream is(dir / "m.csv");
    std::string h, r0, r1, mean;
    std::getline(is, h);
    std::getline(is, r0);
    std::getline(is, r1);
    std::getline(is, mean);
    EXPECT_EQ(h, "image,dsc,miou,mae,hd95");
    EXPECT_EQ(r1, "1,0.5,0.25,0.5,");
    EXPECT_EQ(mean, "mean,0.75,0.625,0.25,2");
    fs::remove_all(dir);
}

// config ---------------------------------------------------------------------------

TEST(RunConfigYaml, RoundTripsEveryField) {
    RunConfig c = tiny_run("runs/x");
    c.train.optim.lr = 3e-4;
    c.train.optim.lr_min = 1e-7;
    c.train.augment_policy.max_rotation_deg = 2.5;
    c.train.multiscale = true;
    c.model.skip = SkipMode::single;
    c.model.node_attention = false;
    c.model.dilation = 2;
    c.data.train = "data/train";
    c.data.test = {"data/a", "data/b"};
    const RunConfig d = parse_run_config(dump_run_config(c));
    EXPECT_EQ(dump_run_config(d), dump_run_config(c));
    EXPECT_EQ(d.train.optim.lr, 3e-4);
    EXPECT_EQ(d.model.skip, SkipMode::single);
    EXPECT_EQ(d.data.test.size(), 2u);
    EXPECT_EQ(d.precision, Precision::f64);
}

TEST(RunConfigYaml, DefaultsAndSettingShorthand) {
    const RunConfig d = parse_run_config("");
    EXPECT_EQ(d.train.epochs, 60u);
    EXPECT_EQ(d.train.batch_size, 8u);
    EXPECT_EQ(d.train.optim.lr, 1e-4);
    const RunConfig s = parse_run_config("model:\n  setting: S2\n");
    EXPECT_EQ(s.model.skip, SkipMode::single);
    EXPECT_TRUE(s.model.node_attention);
}

TEST(RunConfigYaml, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(parse_run_config("sed: 3\n"), ConfigError);
    EXPECT_THROW(parse_run_config("train:\n  epoch: 3\n"), ConfigError);
    EXPECT_THROW(parse_run_config("model:\n  k: 3\n"), ConfigError);
    EXPECT_THROW(parse_run_config("train:\n  epochs: many\n"), ConfigError);
    EXPECT_THROW(parse_run_config("precision: f16\n"), ConfigError);
    EXPECT_THROW(parse_run_config("model: [1, 2\n"), ConfigError);
    EXPECT_THROW(parse_run_config("model:\n  setting: S9\n"), ConfigError);
    EXPECT_THROW(load_run_config("/nonexistent/cfg.yaml"), ConfigError);
    auto c = tiny_run("x");
    c.train.optim.lr_min = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
}
