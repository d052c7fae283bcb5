#include "skipgraph/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

namespace skipgraph {

std::string to_string(Precision p) { return p == Precision::f32 ? "f32" : "f64"; }

Precision precision_from_string(const std::string& s) {
    if (s == "f32") return Precision::f32;
    if (s == "f64") return Precision::f64;
    throw ConfigError("precision must be f32 or f64, got '" + s + "'");
}

namespace {

void reject_unknown(const YAML::Node& node, const std::set<std::string>& known, const std::string& where) {
    if (!node) return;
    if (!node.IsMap()) throw ConfigError(where + ": expected a key/value map");
    for (const auto& kv : node) {
        const auto key = kv.first.as<std::string>();
        if (!known.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <typename V>
void read(const YAML::Node& node, const char* key, V& out, const std::string& where) {
    if (!node || !node[key]) return;
    try {
        out = node[key].as<V>();
    } catch (const YAML::Exception& e) {
        throw ConfigError(where + "." + key + ": " + e.msg);
    }
}

void read_model(const YAML::Node& n, ModelConfig& m) {
    const std::string w = "model";
    reject_unknown(n, {"input_h", "input_w", "encoder_channels", "reduced_channels", "target_shift", "k_neighbors",
                       "dilation", "conv1d_width", "select_m", "repetitions", "ffn_hidden", "skip", "node_attention",
                       "setting"},
                   w);
    if (!n) return;
    read(n, "input_h", m.input_h, w);
    read(n, "input_w", m.input_w, w);
    if (n["encoder_channels"]) {
        auto v = n["encoder_channels"].as<std::vector<std::size_t>>();
        if (v.size() != 4) throw ConfigError("model.encoder_channels: need 4 entries");
        std::copy(v.begin(), v.end(), m.encoder_channels.begin());
    }
    read(n, "reduced_channels", m.reduced_channels, w);
    read(n, "target_shift", m.target_shift, w);
    read(n, "k_neighbors", m.k_neighbors, w);
    read(n, "dilation", m.dilation, w);
    read(n, "conv1d_width", m.conv1d_width, w);
    read(n, "select_m", m.select_m, w);
    read(n, "repetitions", m.repetitions, w);
    read(n, "ffn_hidden", m.ffn_hidden, w);
    if (n["skip"]) m.skip = skip_mode_from_string(n["skip"].as<std::string>());
    read(n, "node_attention", m.node_attention, w);
    // Shorthand for the ablation rows; applied after the explicit fields.
    if (n["setting"]) m = m.with_setting(n["setting"].as<std::string>());
}

void emit_model(YAML::Emitter& e, const ModelConfig& m) {
    e << YAML::BeginMap;
    e << YAML::Key << "input_h" << YAML::Value << m.input_h;
    e << YAML::Key << "input_w" << YAML::Value << m.input_w;
    e << YAML::Key << "encoder_channels" << YAML::Value << YAML::Flow << YAML::BeginSeq;
    for (auto c : m.encoder_channels) e << c;
    e << YAML::EndSeq;
    e << YAML::Key << "reduced_channels" << YAML::Value << m.reduced_channels;
    e << YAML::Key << "target_shift" << YAML::Value << m.target_shift;
    e << YAML::Key << "k_neighbors" << YAML::Value << m.k_neighbors;
    e << YAML::Key << "dilation" << YAML::Value << m.dilation;
    e << YAML::Key << "conv1d_width" << YAML::Value << m.conv1d_width;
    e << YAML::Key << "select_m" << YAML::Value << m.select_m;
    e << YAML::Key << "repetitions" << YAML::Value << m.repetitions;
    e << YAML::Key << "ffn_hidden" << YAML::Value << m.ffn_hidden;
    e << YAML::Key << "skip" << YAML::Value << to_string(m.skip);
    e << YAML::Key << "node_attention" << YAML::Value << m.node_attention;
    e << YAML::EndMap;
}

YAML::Node parse(const std::string& text) {
    try {
        return YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError("config is not valid YAML: " + e.msg);
    }
}

} // namespace

void RunConfig::validate() const {
    model.validate();
    if (train.epochs == 0) throw ConfigError("train.epochs must be positive");
    if (train.batch_size < 2) throw ConfigError("train.batch_size must be at least 2 (batch norm needs statistics)");
    const auto& o = train.optim;
    if (!(o.lr > 0) || o.lr_min < 0 || o.lr_min > o.lr) throw ConfigError("train: need 0 <= lr_min <= lr, lr > 0");
    if (!(o.beta1 >= 0 && o.beta1 < 1 && o.beta2 >= 0 && o.beta2 < 1 && o.eps > 0))
        throw ConfigError("train: betas must lie in [0, 1) and eps must be positive");
    if (train.eval_every == 0) throw ConfigError("train.eval_every must be positive");
}

RunConfig parse_run_config(const std::string& yaml_text) {
    const YAML::Node root = parse(yaml_text);
    RunConfig cfg;
    if (!root || root.IsNull()) return cfg;
    reject_unknown(root, {"seed", "precision", "model", "train", "data", "output"}, "config");
    read(root, "seed", cfg.seed, "config");
    if (root["precision"]) cfg.precision = precision_from_string(root["precision"].as<std::string>());
    read_model(root["model"], cfg.model);

    if (const YAML::Node t = root["train"]) {
        const std::string w = "train";
        reject_unknown(t, {"epochs", "batch_size", "lr", "lr_min", "beta1", "beta2", "eps", "augment", "hflip", "vflip",
                           "max_rotation_deg", "multiscale", "eval_every"},
                       w);
        read(t, "epochs", cfg.train.epochs, w);
        read(t, "batch_size", cfg.train.batch_size, w);
        read(t, "lr", cfg.train.optim.lr, w);
        read(t, "lr_min", cfg.train.optim.lr_min, w);
        read(t, "beta1", cfg.train.optim.beta1, w);
        read(t, "beta2", cfg.train.optim.beta2, w);
        read(t, "eps", cfg.train.optim.eps, w);
        read(t, "augment", cfg.train.augment, w);
        read(t, "hflip", cfg.train.augment_policy.hflip, w);
        read(t, "vflip", cfg.train.augment_policy.vflip, w);
        read(t, "max_rotation_deg", cfg.train.augment_policy.max_rotation_deg, w);
        read(t, "multiscale", cfg.train.multiscale, w);
        read(t, "eval_every", cfg.train.eval_every, w);
    }
    if (const YAML::Node d = root["data"]) {
        reject_unknown(d, {"train", "val", "test"}, "data");
        if (d["train"]) cfg.data.train = d["train"].as<std::string>();
        if (d["val"]) cfg.data.val = d["val"].as<std::string>();
        if (d["test"]) {
            if (d["test"].IsSequence())
                for (const auto& p : d["test"]) cfg.data.test.emplace_back(p.as<std::string>());
            else
                cfg.data.test.emplace_back(d["test"].as<std::string>());
        }
    }
    if (root["output"]) cfg.output = root["output"].as<std::string>();
    return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_run_config(ss.str());
}

std::string dump_run_config(const RunConfig& cfg) {
    YAML::Emitter e;
    e.SetDoublePrecision(17);
    e << YAML::BeginMap;
    e << YAML::Key << "seed" << YAML::Value << cfg.seed;
    e << YAML::Key << "precision" << YAML::Value << to_string(cfg.precision);
    e << YAML::Key << "model" << YAML::Value;
    emit_model(e, cfg.model);
    const auto& t = cfg.train;
    e << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "epochs" << YAML::Value << t.epochs;
    e << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
    e << YAML::Key << "lr" << YAML::Value << t.optim.lr;
    e << YAML::Key << "lr_min" << YAML::Value << t.optim.lr_min;
    e << YAML::Key << "beta1" << YAML::Value << t.optim.beta1;
    e << YAML::Key << "beta2" << YAML::Value << t.optim.beta2;
    e << YAML::Key << "eps" << YAML::Value << t.optim.eps;
    e << YAML::Key << "augment" << YAML::Value << t.augment;
    e << YAML::Key << "hflip" << YAML::Value << t.augment_policy.hflip;
    e << YAML::Key << "vflip" << YAML::Value << t.augment_policy.vflip;
    e << YAML::Key << "max_rotation_deg" << YAML::Value << t.augment_policy.max_rotation_deg;
    e << YAML::Key << "multiscale" << YAML::Value << t.multiscale;
    e << YAML::Key << "eval_every" << YAML::Value << t.eval_every;
    e << YAML::EndMap;
    e << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
    e << YAML::Key << "train" << YAML::Value << cfg.data.train.string();
    e << YAML::Key << "val" << YAML::Value << cfg.data.val.string();
    e << YAML::Key << "test" << YAML::Value << YAML::BeginSeq;
    for (const auto& p : cfg.data.test) e << p.string();
    e << YAML::EndSeq << YAML::EndMap;
    e << YAML::Key << "output" << YAML::Value << cfg.output.string();
    e << YAML::EndMap;
    return std::string(e.c_str()) + "\n";
}

std::string model_config_yaml(const ModelConfig& m) {
    YAML::Emitter e;
    emit_model(e, m);
    return e.c_str();
}

ModelConfig parse_model_config(const std::string& yaml_text) {
    ModelConfig m;
    read_model(parse(yaml_text), m);
    return m;
}

} // namespace skipgraph
