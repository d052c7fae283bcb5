#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "skipgraph/config.hpp"
#include "skipgraph/losses.hpp"
#include "skipgraph/tensor_io.hpp"

namespace skipgraph {

/// lr_min + (lr - lr_min) (1 + cos(pi e / E)) / 2, held for all of epoch e.
double cosine_lr(const OptimConfig& o, std::size_t epoch, std::size_t epochs);

/// Adam with bias correction. Moments live in the parameters' precision;
/// the update arithmetic runs in double.
template <Real T>
class Adam {
public:
    Adam(ParameterStore<T>& store, const OptimConfig& cfg);

    void step(double lr);
    std::size_t steps() const { return steps_; }

    /// adam.m.<param> and adam.v.<param>, one pair per learnable tensor.
    std::vector<Parameter<T>> state() const;
    void load_state(const NamedTensors& tensors, std::size_t steps);

private:
    ParameterStore<T>* store_;
    OptimConfig cfg_;
    std::vector<Tensor<T>> m_, v_;
    std::size_t steps_ = 0;
};

// Evaluation ------------------------------------------------------------------

struct ImageMetrics {
    double dsc = 0, miou = 0, mae = 0;
    std::optional<double> hd95; // missing when either mask is empty
};

struct MetricSummary {
    std::size_t images = 0;
    double dsc = 0, miou = 0, mae = 0;
    double hd95 = 0;                 // over images where it is defined
    std::size_t hd95_missing = 0;
};

MetricSummary summarize(const std::vector<ImageMetrics>& rows);

/// Binary probability maps from the final region head, [H * W] per sample.
template <Real T>
std::vector<std::vector<double>> predict(SkipNet<T>& net, const std::vector<Sample>& samples, std::size_t batch_size);

template <Real T>
std::vector<ImageMetrics> evaluate(SkipNet<T>& net, const std::vector<Sample>& samples, std::size_t batch_size);

ImageMetrics score_prediction(std::span<const double> prob, std::span<const std::uint8_t> mask, std::size_t height,
                              std::size_t width);

/// Mean and sample standard deviation (n - 1); std is 0 for a single value.
struct MeanStd {
    double mean = 0, std = 0;
};
MeanStd mean_std(std::span<const double> values);

// Training --------------------------------------------------------------------

struct EpochLog {
    std::size_t epoch = 0;
    double lr = 0;
    double wiou = 0, wbce = 0, boundary = 0, total = 0; // means over batches, summed over the 4 heads
    std::size_t steps = 0;
    std::optional<MetricSummary> val;
};

/// State of one training run. Shuffling and augmentation draw from streams
/// keyed by (seed, epoch, sample), so a run resumed at an epoch boundary
/// replays exactly the batches the uninterrupted run would have seen.
template <Real T>
class Trainer {
public:
    Trainer(const RunConfig& cfg, const std::vector<Sample>& train, const std::vector<Sample>* val);

    /// One pass over the training set at the epoch's learning rate. A
    /// non-finite value aborts with NumericError after the offending batch
    /// is written to `dump_dir` (when given).
    EpochLog train_epoch(const std::filesystem::path& dump_dir = {});

    /// A single optimizer step on an explicit batch (used by the epoch loop
    /// and by tests). Returns the loss breakdown before the update.
    LossBreakdown step(const std::vector<const Sample*>& batch, double lr);

    bool done() const { return epoch_ >= cfg_.train.epochs; }
    std::size_t epoch() const { return epoch_; }
    std::size_t steps() const { return adam_.steps(); }
    double best_dsc() const { return best_dsc_; }
    void set_best_dsc(double v) { best_dsc_ = v; }
    const RunConfig& config() const { return cfg_; }
    SkipNet<T>& model() { return net_; }

    /// Writes <stem>.atns (params, buffers, optimizer moments) and
    /// <stem>.json (manifest).
    void save_checkpoint(const std::filesystem::path& stem) const;
    /// Restores everything needed to continue training.
    void load_checkpoint(const std::filesystem::path& stem);

    /// Batch order for an epoch (exposed for tests).
    std::vector<std::size_t> epoch_order(std::size_t epoch) const;

private:
    RunConfig cfg_;
    const std::vector<Sample>* train_;
    const std::vector<Sample>* val_;
    SkipNet<T> net_;
    Adam<T> adam_;
    std::size_t epoch_ = 0;
    double best_dsc_ = -1.0;
};

extern template class Adam<float>;
extern template class Adam<double>;
extern template class Trainer<float>;
extern template class Trainer<double>;

// Checkpoints -------------------------------------------------------------------

struct CheckpointManifest {
    std::string tool_version;
    std::string precision;
    std::uint64_t seed = 0;
    std::size_t epoch = 0;
    std::size_t step = 0;
    double best_dsc = -1.0;
    ModelConfig model;
    std::string run_config; // resolved YAML
};

CheckpointManifest read_manifest(const std::filesystem::path& stem);

/// Loads parameters and batch-norm buffers into `net`. Throws ManifestError
/// when the stored model config or any tensor shape disagrees with `net`.
template <Real T>
CheckpointManifest load_weights(SkipNet<T>& net, const std::filesystem::path& stem);

// Run driver --------------------------------------------------------------------

struct FitResult {
    std::size_t epochs_run = 0;
    double best_dsc = -1.0;
    MetricSummary last_val;
};

/// Full training run into cfg.output: config.yaml, train_log.csv, last.*,
/// best.* and (on failure) nan_dump/. With `resume`, continues from last.*.
/// `progress` receives each epoch's log when set.
template <Real T>
FitResult fit(const RunConfig& cfg, const std::vector<Sample>& train, const std::vector<Sample>& val, bool resume,
              const std::function<void(const EpochLog&)>& progress = {});

/// Writes per-image rows and a trailing mean row.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<ImageMetrics>& rows);

} // namespace skipgraph
