#include "skipgraph/app.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>

#include "json.hpp"
#include "skipgraph/image_io.hpp"

namespace skipgraph {

using json = nlohmann::json;

namespace {

/// Calls f.template operator()<T>() with T picked from a precision tag.
template <typename F>
decltype(auto) with_precision(const std::string& tag, F&& f) {
    if (tag == "f32") return f.template operator()<float>();
    if (tag == "f64") return f.template operator()<double>();
    throw ManifestError("unknown precision tag '" + tag + "'");
}

std::string fmt(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_short(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

std::ofstream open_out(const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    return os;
}

MeanStd stat_of(const std::vector<MetricSummary>& v, double MetricSummary::*field) {
    std::vector<double> xs;
    for (const auto& s : v)
        if (!std::isnan(s.*field)) xs.push_back(s.*field);
    if (xs.empty()) return {std::nan(""), std::nan("")};
    return mean_std(xs);
}

EvalRow make_row(std::string corpus, std::vector<MetricSummary> per_seed) {
    EvalRow r;
    r.corpus = std::move(corpus);
    r.dsc = stat_of(per_seed, &MetricSummary::dsc);
    r.miou = stat_of(per_seed, &MetricSummary::miou);
    r.mae = stat_of(per_seed, &MetricSummary::mae);
    r.hd95 = stat_of(per_seed, &MetricSummary::hd95);
    r.per_seed = std::move(per_seed);
    return r;
}

void write_summary(const std::filesystem::path& path, const std::vector<EvalRow>& rows) {
    auto os = open_out(path);
    os << "corpus,runs,dsc_mean,dsc_std,miou_mean,miou_std,mae_mean,mae_std,hd95_mean,hd95_std\n";
    for (const auto& r : rows)
        os << r.corpus << ',' << r.per_seed.size() << ',' << fmt(r.dsc.mean) << ',' << fmt(r.dsc.std) << ','
           << fmt(r.miou.mean) << ',' << fmt(r.miou.std) << ',' << fmt(r.mae.mean) << ',' << fmt(r.mae.std) << ','
           << fmt(r.hd95.mean) << ',' << fmt(r.hd95.std) << '\n';
}

template <Real T>
SkipNet<T> load_model(const std::filesystem::path& stem, CheckpointManifest* manifest = nullptr) {
    const CheckpointManifest m = read_manifest(stem);
    ModelConfig mc = m.model;
    mc.seed = m.seed;
    SkipNet<T> net(mc);
    load_weights(net, stem);
    if (manifest) *manifest = m;
    return net;
}

std::filesystem::path best_or_last(const std::filesystem::path& dir) {
    return std::filesystem::exists(dir / "best.json") ? dir / "best" : dir / "last";
}

} // namespace

// gen-data ------------------------------------------------------------------------

Splits make_splits(const GenDataOptions& o) {
    o.spec.validate();
    Splits s;
    SynthSpec train = o.spec;
    train.stream = 0;
    s.train = generate(train);
    if (o.val_count) {
        SynthSpec val = o.spec;
        val.count = o.val_count;
        val.stream = 1;
        s.val = generate(val);
    }
    if (o.test_count) {
        SynthSpec seen = o.spec;
        seen.count = o.test_count;
        seen.stream = 2;
        s.test_seen = generate(seen);
        s.test_unseen = generate(shifted(seen, o.shift));
    }
    return s;
}

void run_gen_data(const GenDataOptions& o) {
    const Splits s = make_splits(o);
    SynthSpec spec = o.spec;
    write_corpus(o.output / "train", spec, s.train, "train");
    if (!s.val.empty()) {
        spec.count = o.val_count;
        spec.stream = 1;
        write_corpus(o.output / "val", spec, s.val, "val");
    }
    if (!s.test_seen.empty()) {
        spec.count = o.test_count;
        spec.stream = 2;
        write_corpus(o.output / "test_seen", spec, s.test_seen, "test_seen");
        write_corpus(o.output / "test_unseen", shifted(spec, o.shift), s.test_unseen, "test_unseen");
    }
}

// train ---------------------------------------------------------------------------

std::vector<SeedResult> run_train(const TrainOptions& o, const std::vector<Sample>& train, const std::vector<Sample>& val,
                                  const std::vector<std::pair<std::string, std::vector<Sample>>>& tests) {
    o.config.validate();
    std::vector<std::uint64_t> seeds = o.seeds.empty() ? std::vector<std::uint64_t>{o.config.seed} : o.seeds;
    std::vector<SeedResult> results;
    for (std::uint64_t seed : seeds) {
        RunConfig cfg = o.config;
        cfg.seed = seed;
        if (seeds.size() > 1) cfg.output = o.config.output / ("seed_" + std::to_string(seed));
        SeedResult r;
        r.seed = seed;
        r.run_dir = cfg.output;
        const auto progress = [&](const EpochLog& l) {
            if (!o.verbose) return;
            std::printf("seed %llu epoch %zu/%zu lr %.3g loss %.5f", static_cast<unsigned long long>(seed), l.epoch + 1,
                        cfg.train.epochs, l.lr, l.total);
            if (l.val) std::printf(" val_dsc %.4f val_miou %.4f", l.val->dsc, l.val->miou);
            std::printf("\n");
            std::fflush(stdout);
        };
        with_precision(to_string(cfg.precision), [&]<Real T>() {
            r.fit = fit<T>(cfg, train, val, o.resume, progress);
            if (tests.empty()) return 0;
            SkipNet<T> net = load_model<T>(best_or_last(cfg.output));
            for (const auto& [name, samples] : tests) {
                const auto rows = evaluate(net, samples, cfg.train.batch_size);
                write_metrics_csv(cfg.output / ("metrics_" + name + ".csv"), rows);
                r.tests.emplace_back(name, summarize(rows));
            }
            return 0;
        });
        results.push_back(std::move(r));
    }
    if (!tests.empty()) {
        std::vector<EvalRow> rows;
        for (std::size_t t = 0; t < tests.size(); ++t) {
            std::vector<MetricSummary> per_seed;
            for (const auto& r : results) per_seed.push_back(r.tests[t].second);
            rows.push_back(make_row(tests[t].first, per_seed));
        }
        write_summary(o.config.output / "summary.csv", rows);
        if (o.verbose)
            for (const auto& r : rows)
                std::printf("%s: dsc %s +- %s  miou %s +- %s over %zu seed(s)\n", r.corpus.c_str(),
                            fmt_short(r.dsc.mean).c_str(), fmt_short(r.dsc.std).c_str(), fmt_short(r.miou.mean).c_str(),
                            fmt_short(r.miou.std).c_str(), r.per_seed.size());
    }
    return results;
}

std::vector<SeedResult> run_train(const TrainOptions& o) {
    const auto& d = o.config.data;
    if (d.train.empty()) throw ConfigError("data.train is not set");
    const auto train = read_corpus(d.train);
    const auto val = d.val.empty() ? std::vector<Sample>{} : read_corpus(d.val);
    std::vector<std::pair<std::string, std::vector<Sample>>> tests;
    for (const auto& p : d.test) tests.emplace_back(p.filename().string(), read_corpus(p));
    return run_train(o, train, val, tests);
}

// eval ----------------------------------------------------------------------------

namespace {

template <Real T>
void write_diagnostics(SkipNet<T>& net, const Sample& s, const std::filesystem::path& dir, const std::string& tag) {
    NoGradGuard no_grad;
    ForwardTrace<T> trace;
    net.forward(stack_images<T>({&s}), false, &trace);
    for (std::size_t g = 0; g < trace.efs.size(); ++g) {
        const auto& e = trace.efs[g];
        const std::string suffix = tag + "_g" + std::to_string(g);
        auto os = open_out(dir / ("entropy_" + suffix + ".csv"));
        os << "channel,entropy,selected\n";
        const auto& sc = e.entropy[0];
        for (std::size_t c = 0; c < sc.scores.size(); ++c) {
            const bool sel = std::find(sc.bottom_m.begin(), sc.bottom_m.end(), static_cast<std::int32_t>(c)) !=
                             sc.bottom_m.end();
            os << c << ',' << fmt(sc.scores[c]) << ',' << (sel ? 1 : 0) << '\n';
        }
        const auto& a = e.attention;
        Image8 img{a.shape()[2], a.shape()[3], 1, {}};
        for (T v : a.data()) img.pixels.push_back(to_byte(static_cast<double>(v)));
        write_png(dir / ("attention_" + suffix + ".png"), img);
    }
}

} // namespace

std::vector<EvalRow> run_eval(const EvalOptions& o) {
    if (o.checkpoints.empty()) throw ArgumentError("eval needs at least one checkpoint");
    if (o.corpora.empty()) throw ArgumentError("eval needs at least one corpus");
    std::vector<std::pair<std::string, std::vector<Sample>>> corpora;
    for (const auto& p : o.corpora) {
        std::string name = p.filename().string();
        if (name.empty()) name = p.parent_path().filename().string();
        corpora.emplace_back(name, read_corpus(p));
    }
    std::vector<std::vector<MetricSummary>> per(corpora.size());
    for (std::size_t k = 0; k < o.checkpoints.size(); ++k) {
        const CheckpointManifest m = read_manifest(o.checkpoints[k]);
        const std::string label = "run" + std::to_string(k) + "_seed" + std::to_string(m.seed);
        with_precision(m.precision, [&]<Real T>() {
            SkipNet<T> net = load_model<T>(o.checkpoints[k]);
            for (std::size_t c = 0; c < corpora.size(); ++c) {
                const auto& [name, samples] = corpora[c];
                const auto rows = evaluate(net, samples, o.batch_size);
                write_metrics_csv(o.output / ("metrics_" + name + "_" + label + ".csv"), rows);
                per[c].push_back(summarize(rows));
                if (o.diagnostics_image >= 0) {
                    const auto i = static_cast<std::size_t>(o.diagnostics_image);
                    if (i >= samples.size())
                        throw ArgumentError("diagnostics image " + std::to_string(i) + " is outside corpus " + name);
                    write_diagnostics(net, samples[i], o.output, name + "_" + label);
                }
            }
            return 0;
        });
    }
    std::vector<EvalRow> rows;
    for (std::size_t c = 0; c < corpora.size(); ++c) rows.push_back(make_row(corpora[c].first, per[c]));
    write_summary(o.output / "summary.csv", rows);
    return rows;
}

// ablate --------------------------------------------------------------------------

std::size_t count_parameters(const ModelConfig& m) {
    return SkipNet<float>(m).store().count();
}

std::size_t capped_k(const ModelConfig& m) {
    const std::size_t n = m.target_h() * m.target_w();
    const std::size_t d = std::max<std::size_t>(1, m.dilation);
    std::size_t k = m.k_neighbors;
    while (k > 1 && n <= k * d) --k;
    return k;
}

namespace {

struct PlannedRow {
    std::string sweep, label;
    ModelConfig model;
};

template <Real T>
AblationRow train_row(const PlannedRow& p, const RunConfig& base, const Splits& data) {
    RunConfig cfg = base;
    cfg.model = p.model;
    Trainer<T> trainer(cfg, data.train, nullptr);
    while (!trainer.done()) trainer.train_epoch();
    AblationRow row;
    row.sweep = p.sweep;
    row.label = p.label;
    row.model = p.model;
    row.params = trainer.model().store().count();
    row.k_effective = p.model.k_neighbors;
    row.seen = summarize(evaluate(trainer.model(), data.test_seen, cfg.train.batch_size));
    row.unseen = summarize(evaluate(trainer.model(), data.test_unseen, cfg.train.batch_size));
    return row;
}

void write_sweep(const std::filesystem::path& path, const std::string& sweep, const std::vector<AblationRow>& rows) {
    auto os = open_out(path);
    if (sweep == "settings")
        os << "setting,single_scale_gnn,cross_scale_gnn,node_attention,params";
    else if (sweep == "m")
        os << "M,non_selective,params";
    else if (sweep == "resolution")
        os << "s,target_h,target_w,k_effective,params";
    else
        os << "G,params";
    os << ",seen_dsc,seen_miou,unseen_dsc,unseen_miou\n";
    for (const auto& r : rows) {
        if (r.sweep != sweep) continue;
        const auto& m = r.model;
        if (sweep == "settings")
            os << r.label << ',' << (m.skip == SkipMode::single) << ',' << (m.skip == SkipMode::cross) << ','
               << (m.skip != SkipMode::plain && m.node_attention) << ',' << r.params;
        else if (sweep == "m")
            os << m.select_m << ',' << (m.select_m == m.fused_channels()) << ',' << r.params;
        else if (sweep == "resolution")
            os << m.target_shift << ',' << m.target_h() << ',' << m.target_w() << ',' << r.k_effective << ','
               << r.params;
        else
            os << m.repetitions << ',' << r.params;
        os << ',' << fmt(r.seen.dsc) << ',' << fmt(r.seen.miou) << ',' << fmt(r.unseen.dsc) << ','
           << fmt(r.unseen.miou) << '\n';
    }
}

const std::map<std::string, std::string> kSweepFiles = {{"settings", "settings.csv"},
                                                         {"m", "m_sweep.csv"},
                                                         {"resolution", "resolution_sweep.csv"},
                                                         {"repetition", "repetition_sweep.csv"}};

} // namespace

std::vector<AblationRow> run_ablate(const AblateOptions& o) {
    o.base.validate();
    ModelConfig base = o.base.model;
    base.seed = o.base.seed;

    // Plan and validate every row before spending time on training.
    std::vector<PlannedRow> plan;
    for (const auto& sweep : o.sweeps) {
        if (!kSweepFiles.contains(sweep))
            throw ConfigError("unknown sweep '" + sweep + "' (settings | m | resolution | repetition)");
        if (sweep == "settings") {
            for (const char* s : {"S0", "S1", "S2", "S3", "S4"}) plan.push_back({sweep, s, base.with_setting(s)});
        } else if (sweep == "m") {
            for (auto M : o.m_values) {
                ModelConfig m = base.with_setting("S4");
                m.select_m = M;
                plan.push_back({sweep, "M=" + std::to_string(M), m});
            }
        } else if (sweep == "resolution") {
            for (auto s : o.shifts) {
                ModelConfig m = base.with_setting("S4");
                m.target_shift = s;
                if (s >= 2 && s <= 5) m.k_neighbors = capped_k(m);
                plan.push_back({sweep, "s=" + std::to_string(s), m});
            }
        } else {
            for (auto g : o.repetitions) {
                ModelConfig m = base.with_setting("S4");
                m.repetitions = g;
                plan.push_back({sweep, "G=" + std::to_string(g), m});
            }
        }
    }
    for (const auto& p : plan) {
        try {
            p.model.validate();
        } catch (const ConfigError& e) {
            throw ConfigError("ablation row " + p.sweep + " " + p.label + ": " + e.what());
        }
    }

    const Splits data = make_splits(o.data);
    std::filesystem::create_directories(o.output);
    {
        auto os = open_out(o.output / "config.yaml");
        os << "# resolved base configuration, tool version " << kToolVersion << "\n" << dump_run_config(o.base);
    }
    std::vector<AblationRow> rows;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        rows.push_back(with_precision(to_string(o.base.precision),
                                      [&]<Real T>() { return train_row<T>(plan[i], o.base, data); }));
        const auto& r = rows.back();
        if (o.verbose) {
            std::printf("%-10s %-8s params %zu seen_dsc %.4f unseen_dsc %.4f\n", r.sweep.c_str(), r.label.c_str(),
                        r.params, r.seen.dsc, r.unseen.dsc);
            std::fflush(stdout);
        }
        if (i + 1 == plan.size() || plan[i + 1].sweep != r.sweep)
            write_sweep(o.output / kSweepFiles.at(r.sweep), r.sweep, rows);
    }
    return rows;
}

// viz-graph -----------------------------------------------------------------------

namespace {

struct Canvas {
    std::size_t h, w;
    std::vector<std::uint8_t> rgb;

    void put(long x, long y, std::array<std::uint8_t, 3> c) {
        if (x < 0 || y < 0 || x >= static_cast<long>(w) || y >= static_cast<long>(h)) return;
        std::copy(c.begin(), c.end(), rgb.begin() + static_cast<std::ptrdiff_t>((static_cast<std::size_t>(y) * w +
                                                                                 static_cast<std::size_t>(x)) * 3));
    }
    void line(long x0, long y0, long x1, long y1, std::array<std::uint8_t, 3> c) {
        // Bresenham
        const long dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const long sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        long err = dx + dy;
        for (;;) {
            put(x0, y0, c);
            if (x0 == x1 && y0 == y1) break;
            const long e2 = 2 * err;
            if (e2 >= dy) {
                err += dy;
                x0 += sx;
            }
            if (e2 <= dx) {
                err += dx;
                y0 += sy;
            }
        }
    }
    void box(long x0, long y0, long x1, long y1, std::array<std::uint8_t, 3> c) {
        line(x0, y0, x1, y0, c);
        line(x1, y0, x1, y1, c);
        line(x1, y1, x0, y1, c);
        line(x0, y1, x0, y0, c);
    }
};

Sample sample_from_png(const std::filesystem::path& path, std::size_t h, std::size_t w) {
    const Image8 img = read_png(path);
    Sample s;
    s.height = img.height;
    s.width = img.width;
    s.image.resize(3 * img.height * img.width);
    s.mask.assign(img.height * img.width, 0);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t p = 0; p < img.height * img.width; ++p)
            s.image[c * img.height * img.width + p] = img.pixels[p * img.channels + (img.channels == 3 ? c : 0)] / 255.0;
    return rescale(s, h, w);
}

} // namespace

VizResult run_viz_graph(const VizOptions& o) {
    if (o.seeds.empty()) throw ArgumentError("viz-graph needs at least one seed patch");
    const CheckpointManifest manifest = read_manifest(o.checkpoint);
    const ModelConfig& mc = manifest.model;
    if (mc.skip == SkipMode::plain) throw ArgumentError("the checkpoint's model has no graph block (skip mode plain)");
    if (o.block >= mc.repetitions)
        throw ArgumentError("block " + std::to_string(o.block) + " out of range, model has " +
                            std::to_string(mc.repetitions));
    if (o.neighbors == 0 || o.neighbors > mc.k_neighbors)
        throw ArgumentError("neighbors must lie in [1, K = " + std::to_string(mc.k_neighbors) + "]");
    const std::size_t gh = mc.target_h(), gw = mc.target_w();
    for (const auto& [r, c] : o.seeds)
        if (r >= gh || c >= gw)
            throw ArgumentError("seed patch (" + std::to_string(r) + ", " + std::to_string(c) + ") is outside the " +
                                std::to_string(gh) + "x" + std::to_string(gw) + " grid");

    const Sample s = sample_from_png(o.image, mc.input_h, mc.input_w);
    VizResult result;
    result.grid_h = gh;
    result.grid_w = gw;
    with_precision(manifest.precision, [&]<Real T>() {
        SkipNet<T> net = load_model<T>(o.checkpoint);
        NoGradGuard no_grad;
        ForwardTrace<T> trace;
        net.forward(stack_images<T>({&s}), false, &trace);
        const GnnTrace<T>& gt = trace.gnn.at(o.block);
        const PatchGraph& graph = gt.graphs.at(0);
        for (const auto& [r, c] : o.seeds) {
            const std::size_t i = r * gw + c;
            const auto row = graph.row(i);
            for (std::size_t k = 0; k < o.neighbors; ++k)
                result.edges.push_back({i, static_cast<std::size_t>(row[k]), k});
        }
        if (o.dump_features) {
            std::filesystem::create_directories(o.output);
            save_atns(o.output / "features.atns", gt.embedded);
        }
        return 0;
    });

    json nodes = json::array(), edges = json::array();
    for (std::size_t i = 0; i < gh * gw; ++i) nodes.push_back({{"index", i}, {"row", i / gw}, {"col", i % gw}});
    for (const auto& e : result.edges) edges.push_back({{"src", e.src}, {"dst", e.dst}, {"rank", e.rank}});
    const json doc = {{"grid", {gh, gw}}, {"k_neighbors", mc.k_neighbors}, {"dilation", mc.dilation},
                      {"block", o.block}, {"nodes", nodes},                {"edges", edges}};
    open_out(o.output / "graph.json") << doc.dump(1) << '\n';

    // Overlay: nearest-upscaled input, seed patches in red, neighbors in green.
    const std::size_t f = std::max<std::size_t>(1, 256 / std::max(s.height, s.width));
    Canvas cv{s.height * f, s.width * f, std::vector<std::uint8_t>(s.height * f * s.width * f * 3)};
    for (std::size_t y = 0; y < cv.h; ++y)
        for (std::size_t x = 0; x < cv.w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                cv.rgb[(y * cv.w + x) * 3 + c] = to_byte(s.image[(c * s.height + y / f) * s.width + x / f]);
    const double ph = static_cast<double>(cv.h) / static_cast<double>(gh);
    const double pw = static_cast<double>(cv.w) / static_cast<double>(gw);
    const auto corner = [&](std::size_t node) {
        return std::pair<long, long>{std::lround(static_cast<double>(node % gw) * pw),
                                     std::lround(static_cast<double>(node / gw) * ph)};
    };
    const auto center = [&](std::size_t node) {
        return std::pair<long, long>{std::lround((static_cast<double>(node % gw) + 0.5) * pw),
                                     std::lround((static_cast<double>(node / gw) + 0.5) * ph)};
    };
    const long bw = std::max(1L, std::lround(pw) - 1), bh = std::max(1L, std::lround(ph) - 1);
    for (const auto& e : result.edges) {
        const auto [x0, y0] = center(e.src);
        const auto [x1, y1] = center(e.dst);
        cv.line(x0, y0, x1, y1, {255, 220, 0});
        const auto [cx, cy] = corner(e.dst);
        cv.box(cx, cy, cx + bw, cy + bh, {0, 220, 0});
    }
    for (const auto& [r, c] : o.seeds) {
        const auto [cx, cy] = corner(r * gw + c);
        cv.box(cx, cy, cx + bw, cy + bh, {255, 0, 0});
    }
    write_png(o.output / "overlay.png", Image8{cv.h, cv.w, 3, std::move(cv.rgb)});
    return result;
}

} // namespace skipgraph
