#include "skipgraph/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "json.hpp"
#include "skipgraph/image_io.hpp"
#include "skipgraph/metrics.hpp"

namespace skipgraph {

using json = nlohmann::json;

double cosine_lr(const OptimConfig& o, std::size_t epoch, std::size_t epochs) {
    if (epochs == 0) throw ConfigError("cosine_lr: epochs must be positive");
    const double t = static_cast<double>(epoch) / static_cast<double>(epochs);
    return o.lr_min + 0.5 * (o.lr - o.lr_min) * (1.0 + std::cos(std::numbers::pi * t));
}

// Adam ------------------------------------------------------------------------------

template <Real T>
Adam<T>::Adam(ParameterStore<T>& store, const OptimConfig& cfg) : store_(&store), cfg_(cfg) {
    for (const auto& p : store.params()) {
        m_.push_back(Tensor<T>::zeros(p.value.shape()));
        v_.push_back(Tensor<T>::zeros(p.value.shape()));
    }
}

template <Real T>
void Adam<T>::step(double lr) {
    ++steps_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
    const auto& params = store_->params();
    for (std::size_t k = 0; k < params.size(); ++k) {
        Tensor<T> w = params[k].value;
        if (!w.has_grad()) continue; // parameter not reached this step
        auto g = w.grad();
        auto x = w.data();
        auto m = m_[k].data();
        auto v = v_[k].data();
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
            const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double upd = lr * (mi / c1) / (std::sqrt(vi / c2) + cfg_.eps);
            x[i] = static_cast<T>(static_cast<double>(x[i]) - upd);
        }
        detail::check_finite<T>(x, params[k].name.c_str());
    }
}

template <Real T>
std::vector<Parameter<T>> Adam<T>::state() const {
    std::vector<Parameter<T>> out;
    const auto& params = store_->params();
    for (std::size_t k = 0; k < params.size(); ++k) out.push_back({"adam.m." + params[k].name, m_[k]});
    for (std::size_t k = 0; k < params.size(); ++k) out.push_back({"adam.v." + params[k].name, v_[k]});
    return out;
}

namespace {

template <Real T>
void copy_into(Tensor<T>& dst, const StoredTensor& src, const std::string& name) {
    if (src.shape != dst.shape())
        throw ManifestError("checkpoint tensor '" + name + "' has shape " + shape_str(src.shape) + ", model expects " +
                            shape_str(dst.shape()));
    auto d = dst.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(src.values[i]);
}

template <Real T>
void restore(Tensor<T> dst, const NamedTensors& tensors, const std::string& name) {
    const StoredTensor* st = tensors.find(name);
    if (!st) throw ManifestError("checkpoint is missing tensor '" + name + "'");
    copy_into(dst, *st, name);
}

} // namespace

template <Real T>
void Adam<T>::load_state(const NamedTensors& tensors, std::size_t steps) {
    const auto& params = store_->params();
    for (std::size_t k = 0; k < params.size(); ++k) {
        restore(m_[k], tensors, "adam.m." + params[k].name);
        restore(v_[k], tensors, "adam.v." + params[k].name);
    }
    steps_ = steps;
}

// Evaluation ------------------------------------------------------------------------

ImageMetrics score_prediction(std::span<const double> prob, std::span<const std::uint8_t> mask, std::size_t height,
                              std::size_t width) {
    if (prob.size() != mask.size() || prob.size() != height * width)
        throw DimensionError("score_prediction: prediction and mask sizes differ");
    const auto pred = binarize(prob);
    std::vector<double> truth(mask.begin(), mask.end());
    ImageMetrics m;
    m.dsc = dsc(pred, mask);
    m.miou = miou(pred, mask);
    m.mae = mae(prob, truth);
    const bool pred_any = std::any_of(pred.begin(), pred.end(), [](auto v) { return v != 0; });
    const bool mask_any = std::any_of(mask.begin(), mask.end(), [](auto v) { return v != 0; });
    if (pred_any && mask_any) m.hd95 = hd95(pred, mask, height, width);
    return m;
}

MetricSummary summarize(const std::vector<ImageMetrics>& rows) {
    MetricSummary s;
    s.images = rows.size();
    if (rows.empty()) return s;
    std::size_t hd_n = 0;
    for (const auto& r : rows) {
        s.dsc += r.dsc;
        s.miou += r.miou;
        s.mae += r.mae;
        if (r.hd95) {
            s.hd95 += *r.hd95;
            ++hd_n;
        }
    }
    const auto n = static_cast<double>(rows.size());
    s.dsc /= n;
    s.miou /= n;
    s.mae /= n;
    s.hd95 = hd_n ? s.hd95 / static_cast<double>(hd_n) : std::nan("");
    s.hd95_missing = rows.size() - hd_n;
    return s;
}

MeanStd mean_std(std::span<const double> values) {
    MeanStd r;
    if (values.empty()) return r;
    for (double v : values) r.mean += v;
    r.mean /= static_cast<double>(values.size());
    if (values.size() > 1) {
        double ss = 0;
        for (double v : values) ss += (v - r.mean) * (v - r.mean);
        r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    return r;
}

template <Real T>
std::vector<std::vector<double>> predict(SkipNet<T>& net, const std::vector<Sample>& samples, std::size_t batch_size) {
    NoGradGuard no_grad;
    std::vector<std::vector<double>> out;
    out.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        std::vector<const Sample*> batch;
        for (std::size_t i = start; i < std::min(samples.size(), start + batch_size); ++i) batch.push_back(&samples[i]);
        const DeepOutputs<T> o = net.forward(stack_images<T>(batch), false);
        const auto r = o.region[3].data();
        const std::size_t S = batch[0]->height * batch[0]->width;
        for (std::size_t b = 0; b < batch.size(); ++b)
            out.emplace_back(r.begin() + static_cast<std::ptrdiff_t>(b * S),
                             r.begin() + static_cast<std::ptrdiff_t>((b + 1) * S));
    }
    return out;
}

template <Real T>
std::vector<ImageMetrics> evaluate(SkipNet<T>& net, const std::vector<Sample>& samples, std::size_t batch_size) {
    const auto probs = predict(net, samples, batch_size);
    std::vector<ImageMetrics> rows;
    rows.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i)
        rows.push_back(score_prediction(probs[i], samples[i].mask, samples[i].height, samples[i].width));
    return rows;
}

// Trainer -------------------------------------------------------------------------

namespace {

ModelConfig seeded(ModelConfig m, std::uint64_t seed) {
    m.seed = seed;
    return m;
}

constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kAugmentStream = 3;
constexpr std::uint64_t kScaleStream = 4;

void dump_batch(const std::filesystem::path& dir, const std::vector<const Sample*>& batch,
                const std::vector<std::size_t>& indices, std::size_t epoch, std::size_t step, const std::string& what) {
    std::filesystem::create_directories(dir);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const Sample& s = *batch[b];
        Image8 img{s.height, s.width, 3, std::vector<std::uint8_t>(s.height * s.width * 3)};
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < s.height * s.width; ++p)
                img.pixels[p * 3 + c] = to_byte(s.image[c * s.height * s.width + p]);
        Image8 mask{s.height, s.width, 1, std::vector<std::uint8_t>(s.mask.size())};
        for (std::size_t p = 0; p < s.mask.size(); ++p) mask.pixels[p] = s.mask[p] ? 255 : 0;
        char name[32];
        std::snprintf(name, sizeof name, "%02zu", b);
        write_png(dir / (std::string("image_") + name + ".png"), img);
        write_png(dir / (std::string("mask_") + name + ".png"), mask);
    }
    json info = {{"epoch", epoch}, {"step", step}, {"samples", indices}, {"error", what}};
    std::ofstream(dir / "info.json") << info.dump(2) << '\n';
}

} // namespace

template <Real T>
Trainer<T>::Trainer(const RunConfig& cfg, const std::vector<Sample>& train, const std::vector<Sample>* val)
    : cfg_(cfg), train_(&train), val_(val), net_(seeded(cfg.model, cfg.seed)), adam_(net_.store(), cfg.train.optim) {
    cfg_.validate();
    if (train.size() < 2) throw ConfigError("training set needs at least 2 samples");
    for (const auto& s : train)
        if (s.height != cfg_.model.input_h || s.width != cfg_.model.input_w)
            throw ConfigError("training sample is " + std::to_string(s.height) + "x" + std::to_string(s.width) +
                              ", model expects " + std::to_string(cfg_.model.input_h) + "x" +
                              std::to_string(cfg_.model.input_w));
}

template <Real T>
std::vector<std::size_t> Trainer<T>::epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order(train_->size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(stream_seed(cfg_.seed, kShuffleStream, epoch));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

template <Real T>
LossBreakdown Trainer<T>::step(const std::vector<const Sample*>& batch, double lr) {
    const Tensor<T> x = stack_images<T>(batch);
    const SupervisionTargets<T> targets = make_targets(stack_masks<T>(batch));
    net_.store().zero_grad();
    const DeepOutputs<T> out = net_.forward(x, true);
    LossBreakdown br;
    const Tensor<T> loss = total_loss(out, targets, &br);
    loss.backward();
    for (const auto& p : net_.store().params())
        if (p.value.has_grad()) detail::check_finite<T>(p.value.grad(), ("gradient of " + p.name).c_str());
    adam_.step(lr);
    return br;
}

template <Real T>
EpochLog Trainer<T>::train_epoch(const std::filesystem::path& dump_dir) {
    if (done()) throw ConfigError("training already ran all " + std::to_string(cfg_.train.epochs) + " epochs");
    EpochLog log;
    log.epoch = epoch_;
    log.lr = cosine_lr(cfg_.train.optim, epoch_, cfg_.train.epochs);
    const auto order = epoch_order(epoch_);
    const std::size_t B = cfg_.train.batch_size;
    const auto sizes = multiscale_sizes(cfg_.model.input_h);
    const std::uint64_t aug_seed = stream_seed(cfg_.seed, kAugmentStream, epoch_);

    for (std::size_t start = 0; start < order.size(); start += B) {
        const std::size_t end = std::min(order.size(), start + B);
        if (end - start < 2) break; // batch norm cannot use a single-item batch
        std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                     order.begin() + static_cast<std::ptrdiff_t>(end));
        std::vector<Sample> owned;
        owned.reserve(idx.size());
        std::size_t size = cfg_.model.input_h;
        if (cfg_.train.multiscale) {
            Rng srng(stream_seed(cfg_.seed, kScaleStream, epoch_ * 100000 + start));
            size = sizes[srng.below(sizes.size())];
        }
        for (std::size_t i : idx) {
            Sample s = (*train_)[i];
            if (cfg_.train.augment) {
                Rng arng(stream_seed(aug_seed, 0, i));
                s = augment(s, cfg_.train.augment_policy, arng);
            }
            if (size != s.height) {
                const std::size_t w = size * s.width / s.height;
                s = rescale(s, size, w);
            }
            owned.push_back(std::move(s));
        }
        std::vector<const Sample*> batch;
        for (const auto& s : owned) batch.push_back(&s);
        LossBreakdown br;
        try {
            br = step(batch, log.lr);
        } catch (const NumericError& e) {
            if (!dump_dir.empty()) dump_batch(dump_dir, batch, idx, epoch_, adam_.steps(), e.what());
            throw;
        }
        log.wiou += br.wiou_sum();
        log.wbce += br.wbce_sum();
        log.boundary += br.boundary_sum();
        log.total += br.total;
        ++log.steps;
    }
    if (log.steps) {
        const auto n = static_cast<double>(log.steps);
        log.wiou /= n;
        log.wbce /= n;
        log.boundary /= n;
        log.total /= n;
    }
    ++epoch_;
    if (val_ && !val_->empty() && (epoch_ % cfg_.train.eval_every == 0 || done()))
        log.val = summarize(evaluate(net_, *val_, cfg_.train.batch_size));
    return log;
}

// Checkpoints ----------------------------------------------------------------------

namespace {

json model_json(const ModelConfig& m) {
    return {{"input_h", m.input_h},
            {"input_w", m.input_w},
            {"encoder_channels", m.encoder_channels},
            {"reduced_channels", m.reduced_channels},
            {"target_shift", m.target_shift},
            {"k_neighbors", m.k_neighbors},
            {"dilation", m.dilation},
            {"conv1d_width", m.conv1d_width},
            {"select_m", m.select_m},
            {"repetitions", m.repetitions},
            {"ffn_hidden", m.ffn_hidden},
            {"skip", to_string(m.skip)},
            {"node_attention", m.node_attention}};
}

std::filesystem::path with_ext(const std::filesystem::path& stem, const char* ext) {
    return stem.string() + ext;
}

} // namespace

CheckpointManifest read_manifest(const std::filesystem::path& stem) {
    const auto path = with_ext(stem, ".json");
    std::ifstream is(path);
    if (!is) throw ManifestError("checkpoint manifest missing: " + path.string());
    CheckpointManifest m;
    try {
        const json j = json::parse(is);
        m.tool_version = j.at("tool_version").get<std::string>();
        m.precision = j.at("precision").get<std::string>();
        m.seed = j.at("seed").get<std::uint64_t>();
        m.epoch = j.at("epoch").get<std::size_t>();
        m.step = j.at("step").get<std::size_t>();
        m.best_dsc = j.at("best_dsc").get<double>();
        // YAML is a superset of JSON, so the model block reuses the config reader.
        m.model = parse_model_config(j.at("model").dump());
        m.run_config = j.value("run_config", "");
    } catch (const json::exception& e) {
        throw ManifestError("checkpoint manifest " + path.string() + " is malformed: " + e.what());
    }
    return m;
}

template <Real T>
CheckpointManifest load_weights(SkipNet<T>& net, const std::filesystem::path& stem) {
    CheckpointManifest m = read_manifest(stem);
    if (model_config_yaml(m.model) != model_config_yaml(net.config()))
        throw ManifestError("checkpoint " + stem.string() + " was trained with a different model config:\n" +
                            model_config_yaml(m.model) + "\nexpected:\n" + model_config_yaml(net.config()));
    const NamedTensors tensors = load_named(with_ext(stem, ".atns"));
    for (const auto& p : net.store().params()) restore(p.value, tensors, p.name);
    for (const auto& p : net.store().buffers()) restore(p.value, tensors, p.name);
    return m;
}

template <Real T>
void Trainer<T>::save_checkpoint(const std::filesystem::path& stem) const {
    if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
    std::vector<Parameter<T>> all = net_.store().params();
    const auto& buffers = net_.store().buffers();
    all.insert(all.end(), buffers.begin(), buffers.end());
    const auto moments = adam_.state();
    all.insert(all.end(), moments.begin(), moments.end());
    save_named(with_ext(stem, ".atns"), all);

    CheckpointManifest m;
    m.tool_version = kToolVersion;
    m.precision = std::same_as<T, float> ? "f32" : "f64";
    m.seed = cfg_.seed;
    m.epoch = epoch_;
    m.step = adam_.steps();
    m.best_dsc = best_dsc_;
    m.model = cfg_.model;
    m.run_config = dump_run_config(cfg_);
    const json j = {{"tool_version", m.tool_version}, {"precision", m.precision}, {"seed", m.seed},
                    {"epoch", m.epoch},               {"step", m.step},           {"best_dsc", m.best_dsc},
                    {"model", model_json(m.model)},   {"run_config", m.run_config}};
    std::ofstream os(with_ext(stem, ".json"));
    if (!os) throw IoError("cannot write checkpoint manifest for " + stem.string());
    os << j.dump(2) << '\n';
}

template <Real T>
void Trainer<T>::load_checkpoint(const std::filesystem::path& stem) {
    const CheckpointManifest m = load_weights(net_, stem);
    if (m.precision != (std::same_as<T, float> ? "f32" : "f64"))
        throw ManifestError("checkpoint precision " + m.precision + " does not match the run");
    if (m.seed != cfg_.seed) throw ManifestError("checkpoint seed " + std::to_string(m.seed) + " does not match the run");
    adam_.load_state(load_named(with_ext(stem, ".atns")), m.step);
    epoch_ = m.epoch;
    best_dsc_ = m.best_dsc;
}

// Run driver ----------------------------------------------------------------------

namespace {

std::string fmt(double v) {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

constexpr const char* kLogHeader = "epoch,lr,steps,wiou,wbce,boundary,total,val_dsc,val_miou,val_mae,val_hd95";

// Keeps the header and rows of epochs before `epochs_done`, dropping anything
// logged after the checkpoint a resumed run restarts from.
void trim_log(const std::filesystem::path& path, std::size_t epochs_done) {
    std::ifstream is(path);
    std::vector<std::string> keep{kLogHeader};
    std::string line;
    std::getline(is, line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        if (std::stoull(line.substr(0, line.find(','))) < epochs_done) keep.push_back(line);
    }
    is.close();
    std::ofstream os(path, std::ios::trunc);
    for (const auto& l : keep) os << l << '\n';
}

} // namespace

template <Real T>
FitResult fit(const RunConfig& cfg, const std::vector<Sample>& train, const std::vector<Sample>& val, bool resume,
              const std::function<void(const EpochLog&)>& progress) {
    const auto& out = cfg.output;
    std::filesystem::create_directories(out);
    Trainer<T> trainer(cfg, train, &val);
    const auto log_path = out / "train_log.csv";
    if (resume && std::filesystem::exists(out / "last.json")) {
        trainer.load_checkpoint(out / "last");
        trim_log(log_path, trainer.epoch());
    } else {
        std::ofstream(log_path, std::ios::trunc) << kLogHeader << '\n';
    }
    {
        std::ofstream os(out / "config.yaml");
        os << "# resolved configuration, tool version " << kToolVersion << "\n" << dump_run_config(cfg);
    }

    FitResult result;
    while (!trainer.done()) {
        const EpochLog log = trainer.train_epoch(out / "nan_dump");
        if (log.val) {
            result.last_val = *log.val;
            if (log.val->dsc > trainer.best_dsc()) {
                trainer.set_best_dsc(log.val->dsc);
                trainer.save_checkpoint(out / "best");
            }
        }
        trainer.save_checkpoint(out / "last");
        std::ofstream os(log_path, std::ios::app);
        os << log.epoch << ',' << fmt(log.lr) << ',' << log.steps << ',' << fmt(log.wiou) << ',' << fmt(log.wbce) << ','
           << fmt(log.boundary) << ',' << fmt(log.total);
        if (log.val)
            os << ',' << fmt(log.val->dsc) << ',' << fmt(log.val->miou) << ',' << fmt(log.val->mae) << ','
               << fmt(log.val->hd95);
        else
            os << ",,,,";
        os << '\n';
        ++result.epochs_run;
        if (progress) progress(log);
    }
    result.best_dsc = trainer.best_dsc();
    return result;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<ImageMetrics>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << "image,dsc,miou,mae,hd95\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
        os << i << ',' << fmt(rows[i].dsc) << ',' << fmt(rows[i].miou) << ',' << fmt(rows[i].mae) << ','
           << (rows[i].hd95 ? fmt(*rows[i].hd95) : "") << '\n';
    const MetricSummary s = summarize(rows);
    os << "mean," << fmt(s.dsc) << ',' << fmt(s.miou) << ',' << fmt(s.mae) << ',' << fmt(s.hd95) << '\n';
}

#define SKIPGRAPH_INSTANTIATE_TRAIN(T)                                                                            \
    template class Adam<T>;                                                                                       \
    template class Trainer<T>;                                                                                    \
    template std::vector<std::vector<double>> predict<T>(SkipNet<T>&, const std::vector<Sample>&, std::size_t);  \
    template std::vector<ImageMetrics> evaluate<T>(SkipNet<T>&, const std::vector<Sample>&, std::size_t);         \
    template CheckpointManifest load_weights<T>(SkipNet<T>&, const std::filesystem::path&);                       \
    template FitResult fit<T>(const RunConfig&, const std::vector<Sample>&, const std::vector<Sample>&, bool,     \
                              const std::function<void(const EpochLog&)>&);

SKIPGRAPH_INSTANTIATE_TRAIN(float)
SKIPGRAPH_INSTANTIATE_TRAIN(double)

} // namespace skipgraph
