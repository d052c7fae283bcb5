// Command-line front end. Exit codes: 0 ok, 1 invalid input or config,
// 2 numeric failure during training.

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "skipgraph/app.hpp"

using namespace skipgraph;

namespace {

// Accepts a checkpoint stem, either of its files, or a run directory.
std::filesystem::path checkpoint_stem(const std::filesystem::path& p) {
    if (std::filesystem::is_directory(p))
        return std::filesystem::exists(p / "best.json") ? p / "best" : p / "last";
    if (p.extension() == ".json" || p.extension() == ".atns") return p.parent_path() / p.stem();
    return p;
}

std::pair<std::size_t, std::size_t> parse_patch(const std::string& s) {
    const auto comma = s.find(',');
    if (comma == std::string::npos) throw ArgumentError("seed patch must be ROW,COL, got '" + s + "'");
    try {
        return {std::stoul(s.substr(0, comma)), std::stoul(s.substr(comma + 1))};
    } catch (const std::exception&) {
        throw ArgumentError("seed patch must be ROW,COL, got '" + s + "'");
    }
}

void add_synth_flags(CLI::App* cmd, GenDataOptions& g, std::string& family) {
    cmd->add_option("--count", g.spec.count, "training images")->capture_default_str();
    cmd->add_option("--val-count", g.val_count, "validation images")->capture_default_str();
    cmd->add_option("--test-count", g.test_count, "images per test split (seen and unseen)")->capture_default_str();
    cmd->add_option("--family", family, "ellipse | rectangle | blob-union | mixed")->capture_default_str();
    cmd->add_option("--noise", g.spec.noise_sigma, "Gaussian pixel noise sigma")->capture_default_str();
    cmd->add_option("--contrast", g.spec.contrast, "foreground contrast multiplier")->capture_default_str();
    cmd->add_option("--scale", g.spec.scale, "shape size multiplier")->capture_default_str();
    cmd->add_option("--background", g.spec.background_variation, "background gradient amplitude")->capture_default_str();
    cmd->add_option("--data-seed", g.spec.seed, "generator seed")->capture_default_str();
    cmd->add_option("--shift-contrast", g.shift.contrast_factor, "unseen split: contrast factor")->capture_default_str();
    cmd->add_option("--shift-noise", g.shift.noise_add, "unseen split: added noise sigma")->capture_default_str();
    cmd->add_option("--shift-scale", g.shift.scale_factor, "unseen split: shape size factor")->capture_default_str();
    cmd->add_option("--shift-background", g.shift.background_add, "unseen split: added background amplitude")
        ->capture_default_str();
}

int run(int argc, char** argv) {
    CLI::App app{"skipgraph: graph skip-connection segmentation on synthetic data"};
    app.set_version_flag("--version", std::string(kToolVersion));
    app.require_subcommand(1);

    // gen-data
    GenDataOptions gen;
    std::string gen_family = "mixed";
    std::size_t gen_size = 64;
    auto* c_gen = app.add_subcommand("gen-data", "write train/val/test_seen/test_unseen PNG corpora");
    c_gen->add_option("-o,--output", gen.output, "output directory")->required();
    c_gen->add_option("--size", gen_size, "image side, a multiple of 32")->capture_default_str();
    add_synth_flags(c_gen, gen, gen_family);

    // train
    std::filesystem::path train_cfg_path;
    TrainOptions topt;
    std::optional<std::filesystem::path> t_train, t_val, t_out;
    std::vector<std::filesystem::path> t_test;
    std::optional<std::uint64_t> t_seed;
    std::optional<std::size_t> t_epochs, t_batch;
    std::optional<double> t_lr;
    std::optional<std::string> t_precision;
    bool t_quiet = false;
    auto* c_train = app.add_subcommand("train", "train a model; writes checkpoints, train_log.csv and config.yaml");
    c_train->add_option("-c,--config", train_cfg_path, "YAML run config (defaults used for missing keys)");
    c_train->add_option("--train", t_train, "training corpus directory");
    c_train->add_option("--val", t_val, "validation corpus directory");
    c_train->add_option("--test", t_test, "test corpus directories, scored with the best checkpoint");
    c_train->add_option("-o,--output", t_out, "run directory");
    c_train->add_option("--seed", t_seed, "run seed");
    c_train->add_option("--seeds", topt.seeds, "several seeds, one subdirectory each, plus summary.csv")->delimiter(',');
    c_train->add_option("--epochs", t_epochs, "epochs (default 60)");
    c_train->add_option("--batch-size", t_batch, "batch size (default 8)");
    c_train->add_option("--lr", t_lr, "initial learning rate (default 1e-4)");
    c_train->add_option("--precision", t_precision, "f32 | f64");
    c_train->add_flag("--resume", topt.resume, "continue from <output>/last.*");
    c_train->add_flag("-q,--quiet", t_quiet, "no per-epoch output");

    // eval
    EvalOptions eopt;
    std::vector<std::filesystem::path> e_ckpts;
    auto* c_eval = app.add_subcommand("eval", "score checkpoints on corpora; per-image CSV plus mean/std summary");
    c_eval->add_option("--checkpoint", e_ckpts, "checkpoint stem, file or run directory (repeat per seed)")->required();
    c_eval->add_option("--corpus", eopt.corpora, "corpus directory (repeatable)")->required();
    c_eval->add_option("-o,--output", eopt.output, "output directory")->capture_default_str();
    c_eval->add_option("--batch-size", eopt.batch_size, "evaluation batch size")->capture_default_str();
    c_eval->add_option("--diagnostics", eopt.diagnostics_image,
                       "image index: also write per-channel entropy CSV and attention PNG");

    // ablate
    AblateOptions aopt;
    std::filesystem::path a_cfg_path;
    std::string a_family = "mixed";
    std::optional<std::size_t> a_epochs;
    std::optional<std::uint64_t> a_seed;
    auto* c_abl = app.add_subcommand("ablate", "S0-S4, M, target-resolution and repetition sweeps to CSV");
    c_abl->add_option("-c,--config", a_cfg_path, "YAML base config");
    c_abl->add_option("-o,--output", aopt.output, "output directory")->capture_default_str();
    c_abl->add_option("--sweeps", aopt.sweeps, "settings,m,resolution,repetition")->delimiter(',')->capture_default_str();
    c_abl->add_option("--m-values", aopt.m_values, "M grid")->delimiter(',')->capture_default_str();
    c_abl->add_option("--shifts", aopt.shifts, "s grid")->delimiter(',')->capture_default_str();
    c_abl->add_option("--repetitions", aopt.repetitions, "G grid")->delimiter(',')->capture_default_str();
    c_abl->add_option("--epochs", a_epochs, "epochs per row (overrides config)");
    c_abl->add_option("--seed", a_seed, "run seed");
    add_synth_flags(c_abl, aopt.data, a_family);

    // viz-graph
    VizOptions vopt;
    std::vector<std::string> v_patches;
    auto* c_viz = app.add_subcommand("viz-graph", "dump the patch graph of one image as JSON and a PNG overlay");
    c_viz->add_option("--checkpoint", vopt.checkpoint, "checkpoint stem, file or run directory")->required();
    c_viz->add_option("--image", vopt.image, "input PNG")->required();
    c_viz->add_option("--patch", v_patches, "seed patch ROW,COL on the target grid (repeatable)")->required();
    c_viz->add_option("--neighbors", vopt.neighbors, "neighbors drawn per seed patch")->capture_default_str();
    c_viz->add_option("--block", vopt.block, "repetition whose graph is shown")->capture_default_str();
    c_viz->add_option("-o,--output", vopt.output, "output directory")->capture_default_str();
    c_viz->add_flag("--dump-features", vopt.dump_features, "also write features.atns");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (*c_gen) {
        gen.spec.height = gen.spec.width = gen_size;
        gen.spec.family = shape_family_from_string(gen_family);
        run_gen_data(gen);
        std::printf("wrote %s/{train,val,test_seen,test_unseen}\n", gen.output.string().c_str());
    } else if (*c_train) {
        RunConfig cfg = train_cfg_path.empty() ? RunConfig{} : load_run_config(train_cfg_path);
        if (t_train) cfg.data.train = *t_train;
        if (t_val) cfg.data.val = *t_val;
        if (!t_test.empty()) cfg.data.test = t_test;
        if (t_out) cfg.output = *t_out;
        if (t_seed) cfg.seed = *t_seed;
        if (t_epochs) cfg.train.epochs = *t_epochs;
        if (t_batch) cfg.train.batch_size = *t_batch;
        if (t_lr) cfg.train.optim.lr = *t_lr;
        if (t_precision) cfg.precision = precision_from_string(*t_precision);
        topt.config = cfg;
        topt.verbose = !t_quiet;
        run_train(topt);
    } else if (*c_eval) {
        for (const auto& p : e_ckpts) eopt.checkpoints.push_back(checkpoint_stem(p));
        const auto rows = run_eval(eopt);
        for (const auto& r : rows)
            std::printf("%s: dsc %.4f +- %.4f  miou %.4f +- %.4f  mae %.4f  hd95 %.3f\n", r.corpus.c_str(), r.dsc.mean,
                        r.dsc.std, r.miou.mean, r.miou.std, r.mae.mean, r.hd95.mean);
    } else if (*c_abl) {
        aopt.base = a_cfg_path.empty() ? RunConfig{} : load_run_config(a_cfg_path);
        if (a_epochs) aopt.base.train.epochs = *a_epochs;
        if (a_seed) aopt.base.seed = *a_seed;
        aopt.data.spec.height = aopt.base.model.input_h;
        aopt.data.spec.width = aopt.base.model.input_w;
        aopt.data.spec.family = shape_family_from_string(a_family);
        aopt.data.val_count = 0;
        run_ablate(aopt);
    } else if (*c_viz) {
        vopt.checkpoint = checkpoint_stem(vopt.checkpoint);
        for (const auto& p : v_patches) vopt.seeds.push_back(parse_patch(p));
        const auto res = run_viz_graph(vopt);
        std::printf("%zu edges on a %zux%zu grid -> %s\n", res.edges.size(), res.grid_h, res.grid_w,
                    vopt.output.string().c_str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
