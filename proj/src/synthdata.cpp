#include "skipgraph/synthdata.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numbers>

#include "json.hpp"
#include "skipgraph/image_io.hpp"

namespace skipgraph {

using json = nlohmann::json;

std::string to_string(ShapeFamily f) {
    switch (f) {
    case ShapeFamily::ellipse: return "ellipse";
    case ShapeFamily::rectangle: return "rectangle";
    case ShapeFamily::blob_union: return "blob-union";
    case ShapeFamily::mixed: return "mixed";
    }
    return "?";
}

ShapeFamily shape_family_from_string(const std::string& s) {
    if (s == "ellipse") return ShapeFamily::ellipse;
    if (s == "rectangle") return ShapeFamily::rectangle;
    if (s == "blob-union") return ShapeFamily::blob_union;
    if (s == "mixed") return ShapeFamily::mixed;
    throw ConfigError("unknown shape family '" + s + "' (ellipse | rectangle | blob-union | mixed)");
}

void SynthSpec::validate() const {
    if (count == 0) throw ConfigError("synthetic corpus: count must be positive");
    if (height == 0 || width == 0 || height % 32 != 0 || width % 32 != 0)
        throw ConfigError("synthetic corpus: size must be a positive multiple of 32");
    if (noise_sigma < 0 || contrast <= 0 || scale <= 0 || background_variation < 0)
        throw ConfigError("synthetic corpus: noise, contrast, scale and background must be non-negative");
    if (!(min_area > 0 && min_area < max_area && max_area < 1))
        throw ConfigError("synthetic corpus: need 0 < min_area < max_area < 1");
}

SynthSpec shifted(const SynthSpec& spec, const DomainShift& shift) {
    SynthSpec s = spec;
    s.contrast *= shift.contrast_factor;
    s.noise_sigma += shift.noise_add;
    s.scale *= shift.scale_factor;
    s.background_variation += shift.background_add;
    return s;
}

std::size_t Sample::area() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

namespace {

using Inside = std::function<bool(double, double)>;

Inside sample_shape(ShapeFamily family, double s0, double W, double H, Rng& rng) {
    const double cx = rng.uniform(0.25, 0.75) * W;
    const double cy = rng.uniform(0.25, 0.75) * H;
    const double th = rng.uniform(0.0, std::numbers::pi);
    const double c = std::cos(th), s = std::sin(th);
    switch (family) {
    case ShapeFamily::ellipse: {
        const double a = s0 * rng.uniform(0.12, 0.32), b = s0 * rng.uniform(0.12, 0.32);
        return [=](double x, double y) {
            const double u = (x - cx) * c + (y - cy) * s, v = -(x - cx) * s + (y - cy) * c;
            return (u * u) / (a * a) + (v * v) / (b * b) <= 1.0;
        };
    }
    case ShapeFamily::rectangle: {
        const double a = s0 * rng.uniform(0.10, 0.28), b = s0 * rng.uniform(0.10, 0.28);
        return [=](double x, double y) {
            const double u = (x - cx) * c + (y - cy) * s, v = -(x - cx) * s + (y - cy) * c;
            return std::abs(u) <= a && std::abs(v) <= b;
        };
    }
    case ShapeFamily::blob_union: {
        const std::size_t n = 2 + rng.below(3);
        std::vector<std::array<double, 3>> discs;
        double px = cx, py = cy;
        for (std::size_t k = 0; k < n; ++k) {
            const double r = s0 * rng.uniform(0.08, 0.18);
            if (k > 0) {
                const double ang = rng.uniform(0.0, 2 * std::numbers::pi);
                const double step = r * rng.uniform(0.6, 1.2);
                px = std::clamp(px + step * std::cos(ang), 0.15 * W, 0.85 * W);
                py = std::clamp(py + step * std::sin(ang), 0.15 * H, 0.85 * H);
            }
            discs.push_back({px, py, r});
        }
        return [discs](double x, double y) {
            for (const auto& d : discs)
                if ((x - d[0]) * (x - d[0]) + (y - d[1]) * (y - d[1]) <= d[2] * d[2]) return true;
            return false;
        };
    }
    case ShapeFamily::mixed: break;
    }
    throw ConfigError("sample_shape: family must be concrete");
}

// 5x5 supersampled coverage in [0, 1]; 25 sub-samples so it is never exactly 0.5.
std::vector<double> coverage(const Inside& inside, std::size_t H, std::size_t W) {
    std::vector<double> cov(H * W);
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            int hits = 0;
            for (int sy = 0; sy < 5; ++sy)
                for (int sx = 0; sx < 5; ++sx)
                    hits += inside(static_cast<double>(x) + (sx + 0.5) / 5.0, static_cast<double>(y) + (sy + 0.5) / 5.0);
            cov[y * W + x] = hits / 25.0;
        }
    return cov;
}

constexpr std::size_t kMaxShapeTries = 500;

} // namespace

Sample generate_one(const SynthSpec& spec, std::size_t index) {
    spec.validate();
    Rng rng(stream_seed(spec.seed, 0x5d00 + spec.stream, index));
    const std::size_t H = spec.height, W = spec.width;
    const double s0 = static_cast<double>(std::min(H, W)) * spec.scale;

    ShapeFamily family = spec.family;
    if (family == ShapeFamily::mixed) family = static_cast<ShapeFamily>(rng.below(3));

    std::vector<double> cov;
    std::size_t tries = 0;
    for (;; ++tries) {
        if (tries == kMaxShapeTries)
            throw ConfigError("synthetic corpus: no shape met the area bounds after " + std::to_string(tries) +
                              " tries (sample " + std::to_string(index) + ")");
        cov = coverage(sample_shape(family, s0, static_cast<double>(W), static_cast<double>(H), rng), H, W);
        std::size_t area = 0;
        for (double a : cov) area += a >= 0.5;
        const double frac = static_cast<double>(area) / static_cast<double>(H * W);
        if (area > 0 && frac >= spec.min_area && frac <= spec.max_area) break;
    }

    Sample out;
    out.height = H;
    out.width = W;
    out.mask.resize(H * W);
    for (std::size_t i = 0; i < H * W; ++i) out.mask[i] = cov[i] >= 0.5 ? 1 : 0;

    std::array<double, 3> bg{}, amp{};
    for (int c = 0; c < 3; ++c) {
        bg[c] = rng.uniform(0.15, 0.45);
        amp[c] = rng.uniform(0.3, 0.5);
    }
    const double gdir = rng.uniform(0.0, 2 * std::numbers::pi);
    const double gu = std::cos(gdir), gv = std::sin(gdir);
    out.image.resize(3 * H * W);
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < H; ++y)
            for (std::size_t x = 0; x < W; ++x) {
                const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(W) - 0.5;
                const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(H) - 0.5;
                double val = bg[c] + spec.background_variation * (gu * u + gv * v) +
                             cov[y * W + x] * spec.contrast * amp[c];
                if (spec.noise_sigma > 0) val += spec.noise_sigma * rng.normal();
                out.image[(c * H + y) * W + x] = std::clamp(val, 0.0, 1.0);
            }
    return out;
}

std::vector<Sample> generate(const SynthSpec& spec) {
    spec.validate();
    std::vector<Sample> out;
    out.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) out.push_back(generate_one(spec, i));
    return out;
}

void hflip(Sample& s) {
    const std::size_t H = s.height, W = s.width;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < H; ++y)
            std::reverse(s.image.begin() + static_cast<std::ptrdiff_t>((c * H + y) * W),
                         s.image.begin() + static_cast<std::ptrdiff_t>((c * H + y + 1) * W));
    for (std::size_t y = 0; y < H; ++y)
        std::reverse(s.mask.begin() + static_cast<std::ptrdiff_t>(y * W),
                     s.mask.begin() + static_cast<std::ptrdiff_t>((y + 1) * W));
}

void vflip(Sample& s) {
    const std::size_t H = s.height, W = s.width;
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t y = 0; y < H / 2; ++y)
            std::swap_ranges(s.image.begin() + static_cast<std::ptrdiff_t>((c * H + y) * W),
                             s.image.begin() + static_cast<std::ptrdiff_t>((c * H + y + 1) * W),
                             s.image.begin() + static_cast<std::ptrdiff_t>((c * H + H - 1 - y) * W));
    for (std::size_t y = 0; y < H / 2; ++y)
        std::swap_ranges(s.mask.begin() + static_cast<std::ptrdiff_t>(y * W),
                         s.mask.begin() + static_cast<std::ptrdiff_t>((y + 1) * W),
                         s.mask.begin() + static_cast<std::ptrdiff_t>((H - 1 - y) * W));
}

void rotate(Sample& s, double degrees) {
    if (degrees == 0.0) return;
    const std::size_t H = s.height, W = s.width;
    const double th = degrees * std::numbers::pi / 180.0;
    const double c = std::cos(th), sn = std::sin(th);
    const double cx = (static_cast<double>(W) - 1) / 2, cy = (static_cast<double>(H) - 1) / 2;
    std::vector<double> img(s.image.size());
    std::vector<std::uint8_t> mask(s.mask.size());
    for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            const double sx = c * dx + sn * dy + cx;
            const double sy = -sn * dx + c * dy + cy;
            const long rx = std::lround(sx), ry = std::lround(sy);
            const bool in = rx >= 0 && ry >= 0 && rx < static_cast<long>(W) && ry < static_cast<long>(H);
            mask[y * W + x] = in ? s.mask[static_cast<std::size_t>(ry) * W + static_cast<std::size_t>(rx)] : 0;

            const double fx = std::clamp(sx, 0.0, static_cast<double>(W - 1));
            const double fy = std::clamp(sy, 0.0, static_cast<double>(H - 1));
            const auto x0 = static_cast<std::size_t>(std::floor(fx)), y0 = static_cast<std::size_t>(std::floor(fy));
            const std::size_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
            const double ax = fx - static_cast<double>(x0), ay = fy - static_cast<double>(y0);
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const double* p = s.image.data() + ch * H * W;
                const double top = p[y0 * W + x0] + ax * (p[y0 * W + x1] - p[y0 * W + x0]);
                const double bot = p[y1 * W + x0] + ax * (p[y1 * W + x1] - p[y1 * W + x0]);
                img[(ch * H + y) * W + x] = top + ay * (bot - top);
            }
        }
    s.image = std::move(img);
    s.mask = std::move(mask);
}

Sample augment(const Sample& s, const AugmentPolicy& policy, Rng& rng) {
    // Always three draws, so the stream position does not depend on outcomes.
    const bool h = rng.bernoulli(policy.hflip);
    const bool v = rng.bernoulli(policy.vflip);
    const double angle = rng.uniform(-policy.max_rotation_deg, policy.max_rotation_deg);
    Sample out = s;
    if (h) hflip(out);
    if (v) vflip(out);
    if (policy.max_rotation_deg > 0) rotate(out, angle);
    return out;
}

Sample rescale(const Sample& s, std::size_t height, std::size_t width) {
    if (height == 0 || width == 0) throw ConfigError("rescale: target size must be positive");
    if (height == s.height && width == s.width) return s;
    const std::size_t H = s.height, W = s.width;
    Sample out;
    out.height = height;
    out.width = width;
    out.image.resize(3 * height * width);
    out.mask.resize(height * width);
    const double sy = static_cast<double>(H) / static_cast<double>(height);
    const double sx = static_cast<double>(W) / static_cast<double>(width);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(H - 1));
            const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(W - 1));
            const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
            const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
            const double ay = fy - static_cast<double>(y0), ax = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double* p = s.image.data() + c * H * W;
                const double top = p[y0 * W + x0] + ax * (p[y0 * W + x1] - p[y0 * W + x0]);
                const double bot = p[y1 * W + x0] + ax * (p[y1 * W + x1] - p[y1 * W + x0]);
                out.image[(c * height + y) * width + x] = top + ay * (bot - top);
            }
            const auto ny = std::min(H - 1, static_cast<std::size_t>((static_cast<double>(y) + 0.5) * sy));
            const auto nx = std::min(W - 1, static_cast<std::size_t>((static_cast<double>(x) + 0.5) * sx));
            out.mask[y * width + x] = s.mask[ny * W + nx];
        }
    return out;
}

std::vector<std::size_t> multiscale_sizes(std::size_t base) {
    std::vector<std::size_t> out;
    for (double f : {0.75, 1.0, 1.25}) {
        const auto units = static_cast<std::size_t>(std::max(1.0, std::round(static_cast<double>(base) * f / 32.0)));
        const std::size_t size = units * 32;
        if (std::find(out.begin(), out.end(), size) == out.end()) out.push_back(size);
    }
    return out;
}

template <Real T>
Tensor<T> stack_images(const std::vector<const Sample*>& batch) {
    if (batch.empty()) throw DimensionError("stack_images: empty batch");
    const std::size_t H = batch[0]->height, W = batch[0]->width;
    std::vector<T> v;
    v.reserve(batch.size() * 3 * H * W);
    for (const Sample* s : batch) {
        if (s->height != H || s->width != W) throw DimensionError("stack_images: mixed sizes in one batch");
        for (double x : s->image) v.push_back(static_cast<T>(x));
    }
    return Tensor<T>({batch.size(), 3, H, W}, std::move(v));
}

template <Real T>
Tensor<T> stack_masks(const std::vector<const Sample*>& batch) {
    if (batch.empty()) throw DimensionError("stack_masks: empty batch");
    const std::size_t H = batch[0]->height, W = batch[0]->width;
    std::vector<T> v;
    v.reserve(batch.size() * H * W);
    for (const Sample* s : batch) {
        if (s->height != H || s->width != W) throw DimensionError("stack_masks: mixed sizes in one batch");
        for (auto m : s->mask) v.push_back(m ? T(1) : T(0));
    }
    return Tensor<T>({batch.size(), 1, H, W}, std::move(v));
}

template Tensor<float> stack_images<float>(const std::vector<const Sample*>&);
template Tensor<double> stack_images<double>(const std::vector<const Sample*>&);
template Tensor<long double> stack_images<long double>(const std::vector<const Sample*>&);
template Tensor<float> stack_masks<float>(const std::vector<const Sample*>&);
template Tensor<double> stack_masks<double>(const std::vector<const Sample*>&);
template Tensor<long double> stack_masks<long double>(const std::vector<const Sample*>&);

namespace {

json spec_json(const SynthSpec& s) {
    return {{"count", s.count},
            {"height", s.height},
            {"width", s.width},
            {"family", to_string(s.family)},
            {"noise_sigma", s.noise_sigma},
            {"contrast", s.contrast},
            {"background_variation", s.background_variation},
            {"scale", s.scale},
            {"min_area", s.min_area},
            {"max_area", s.max_area},
            {"seed", s.seed},
            {"stream", s.stream}};
}

std::string numbered(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04zu.png", i);
    return buf;
}

} // namespace

void write_corpus(const std::filesystem::path& dir, const SynthSpec& spec, const std::vector<Sample>& samples,
                  const std::string& split) {
    std::filesystem::create_directories(dir / "images");
    std::filesystem::create_directories(dir / "masks");
    json files = json::array();
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        Image8 img{s.height, s.width, 3, std::vector<std::uint8_t>(s.height * s.width * 3)};
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < s.height * s.width; ++p)
                img.pixels[p * 3 + c] = to_byte(s.image[c * s.height * s.width + p]);
        Image8 mask{s.height, s.width, 1, std::vector<std::uint8_t>(s.height * s.width)};
        for (std::size_t p = 0; p < s.mask.size(); ++p) mask.pixels[p] = s.mask[p] ? 255 : 0;
        const std::string name = numbered(i);
        write_png(dir / "images" / name, img);
        write_png(dir / "masks" / name, mask);
        files.push_back({{"image", "images/" + name}, {"mask", "masks/" + name}, {"area", s.area()}});
    }
    json manifest = {{"split", split}, {"spec", spec_json(spec)}, {"count", samples.size()}, {"files", files}};
    std::ofstream os(dir / "manifest.json");
    if (!os) throw IoError("cannot write " + (dir / "manifest.json").string());
    os << manifest.dump(2) << '\n';
}

std::vector<Sample> read_corpus(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw ManifestError("corpus manifest missing: " + (dir / "manifest.json").string());
    json manifest;
    try {
        manifest = json::parse(is);
    } catch (const json::exception& e) {
        throw ManifestError("corpus manifest unreadable: " + std::string(e.what()));
    }
    if (!manifest.contains("files") || !manifest["files"].is_array())
        throw ManifestError("corpus manifest has no file list: " + dir.string());
    std::vector<Sample> out;
    for (const auto& f : manifest["files"]) {
        const Image8 img = read_png(dir / f.at("image").get<std::string>());
        Image8 mask = read_png(dir / f.at("mask").get<std::string>());
        if (img.channels != 3 || mask.channels != 1 || img.height != mask.height || img.width != mask.width)
            throw ManifestError("corpus entry " + f.at("image").get<std::string>() + " has mismatched image/mask");
        Sample s;
        s.height = img.height;
        s.width = img.width;
        s.image.resize(3 * s.height * s.width);
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t p = 0; p < s.height * s.width; ++p)
                s.image[c * s.height * s.width + p] = img.pixels[p * 3 + c] / 255.0;
        s.mask.resize(s.height * s.width);
        for (std::size_t p = 0; p < s.mask.size(); ++p) s.mask[p] = mask.pixels[p] >= 128 ? 1 : 0;
        out.push_back(std::move(s));
    }
    if (out.empty()) throw ManifestError("corpus is empty: " + dir.string());
    return out;
}

} // namespace skipgraph
