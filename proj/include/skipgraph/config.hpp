#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "skipgraph/model.hpp"
#include "skipgraph/synthdata.hpp"

namespace skipgraph {

enum class Precision { f32, f64 };

std::string to_string(Precision p);
Precision precision_from_string(const std::string& s);

struct OptimConfig {
    double lr = 1e-4;
    double lr_min = 1e-6; // cosine floor
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

struct TrainConfig {
    std::size_t epochs = 60;
    std::size_t batch_size = 8;
    OptimConfig optim;
    bool augment = true;
    AugmentPolicy augment_policy;
    bool multiscale = false; // rescale each batch to one of multiscale_sizes(input)
    std::size_t eval_every = 1;
};

struct DataConfig {
    std::filesystem::path train;
    std::filesystem::path val;
    std::vector<std::filesystem::path> test;
};

/// Everything a run needs. Serialized as YAML; the resolved form (defaults
/// filled in) is written into every run directory.
struct RunConfig {
    std::uint64_t seed = 1;
    Precision precision = Precision::f32;
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
    std::filesystem::path output = "runs/default";

    void validate() const;
};

/// Missing keys keep their defaults; unknown keys are rejected so typos do
/// not silently fall back.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(const std::string& yaml_text);
std::string dump_run_config(const RunConfig& cfg);

/// Model fields only, as a flat key/value map (used by checkpoint manifests).
std::string model_config_yaml(const ModelConfig& m);
ModelConfig parse_model_config(const std::string& yaml_text);

inline constexpr const char* kToolVersion = "0.1.0";

} // namespace skipgraph
