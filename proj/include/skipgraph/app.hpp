#pragma once

// Entry points behind the command-line subcommands. Each writes its artifacts
// under an output directory and returns a small summary for callers that
// want numbers rather than files (tests, the Python module).

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "skipgraph/train.hpp"

namespace skipgraph {

// gen-data --------------------------------------------------------------------

struct GenDataOptions {
    SynthSpec spec;               // train split; the others derive from it
    std::size_t val_count = 50;
    std::size_t test_count = 100;
    DomainShift shift;
    std::filesystem::path output = "data";
};

/// Four corpora: train (stream 0), val (1), test_seen (2) and test_unseen
/// (stream 2 with the domain shift applied).
struct Splits {
    std::vector<Sample> train, val, test_seen, test_unseen;
};

Splits make_splits(const GenDataOptions& o);
void run_gen_data(const GenDataOptions& o);

// train -----------------------------------------------------------------------

struct TrainOptions {
    RunConfig config;
    std::vector<std::uint64_t> seeds; // empty = config.seed; several = one subdirectory per seed
    bool resume = false;
    bool verbose = true;
};

struct SeedResult {
    std::uint64_t seed = 0;
    std::filesystem::path run_dir;
    FitResult fit;
    std::vector<std::pair<std::string, MetricSummary>> tests; // per data.test corpus, best checkpoint
};

/// Trains on already-loaded splits. `tests` are (name, samples) pairs scored
/// with the best checkpoint after training.
std::vector<SeedResult> run_train(const TrainOptions& o, const std::vector<Sample>& train, const std::vector<Sample>& val,
                                  const std::vector<std::pair<std::string, std::vector<Sample>>>& tests);
/// Same, reading the corpora named in the config.
std::vector<SeedResult> run_train(const TrainOptions& o);

// eval ------------------------------------------------------------------------

struct EvalOptions {
    std::vector<std::filesystem::path> checkpoints; // one per seed
    std::vector<std::filesystem::path> corpora;
    std::filesystem::path output = "eval";
    std::size_t batch_size = 8;
    long diagnostics_image = -1; // >= 0: entropy CSV + attention PNG for that image
};

struct EvalRow {
    std::string corpus;
    std::vector<MetricSummary> per_seed;
    MeanStd dsc, miou, mae, hd95;
};

/// Writes metrics_<corpus>_<ckpt>.csv per pair and summary.csv with mean and
/// sample std across checkpoints.
std::vector<EvalRow> run_eval(const EvalOptions& o);

// ablate ----------------------------------------------------------------------

struct AblateOptions {
    RunConfig base;               // model and training settings shared by every row
    std::vector<std::string> sweeps{"settings", "m", "resolution", "repetition"};
    std::vector<std::size_t> m_values{8, 16, 32, 64, 128, 256};
    std::vector<std::size_t> shifts{2, 3, 4, 5};
    std::vector<std::size_t> repetitions{1, 3, 5};
    GenDataOptions data;          // corpora are generated in memory
    std::filesystem::path output = "ablation";
    bool verbose = true;
};

struct AblationRow {
    std::string sweep;
    std::string label;
    ModelConfig model;
    std::size_t params = 0;
    std::size_t k_effective = 0;
    MetricSummary seen, unseen;
};

/// Table-shaped CSVs: settings.csv, m_sweep.csv, resolution_sweep.csv,
/// repetition_sweep.csv (only for the requested sweeps).
std::vector<AblationRow> run_ablate(const AblateOptions& o);

/// Parameter count of a model built from `m` without training it.
std::size_t count_parameters(const ModelConfig& m);

/// Largest K' <= K with N > K' d for the config's target grid (at least 1).
std::size_t capped_k(const ModelConfig& m);

// viz-graph ---------------------------------------------------------------------

struct VizOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path image;     // PNG, resized to the model input if needed
    std::vector<std::pair<std::size_t, std::size_t>> seeds; // (row, col) on the target grid
    std::size_t neighbors = 5;
    std::size_t block = 0;           // which repetition's graph
    std::filesystem::path output = "viz";
    bool dump_features = false;      // features.atns: the [C, N] matrix the graph was built from
};

struct VizEdge {
    std::size_t src, dst, rank;
};

struct VizResult {
    std::size_t grid_h = 0, grid_w = 0;
    std::vector<VizEdge> edges;
};

/// graph.json ({nodes, edges}) and overlay.png.
VizResult run_viz_graph(const VizOptions& o);

} // namespace skipgraph
