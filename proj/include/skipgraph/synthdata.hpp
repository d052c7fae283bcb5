#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "skipgraph/random.hpp"
#include "skipgraph/tensor.hpp"

namespace skipgraph {

enum class ShapeFamily { ellipse, rectangle, blob_union, mixed };

std::string to_string(ShapeFamily f);
ShapeFamily shape_family_from_string(const std::string& s);

struct SynthSpec {
    std::size_t count = 200;
    std::size_t height = 64;
    std::size_t width = 64;
    ShapeFamily family = ShapeFamily::mixed;
    double noise_sigma = 0.05;
    double contrast = 1.0;            // foreground/background intensity gap multiplier
    double background_variation = 0.15; // amplitude of the smooth background gradient
    double scale = 1.0;               // multiplier on sampled shape sizes
    double min_area = 0.04;           // foreground fraction bounds
    double max_area = 0.40;
    std::uint64_t seed = 1;
    std::uint64_t stream = 0;         // separates splits drawn from one seed

    void validate() const;
};

/// Offsets that turn a seen-split spec into its shifted ("unseen") twin.
struct DomainShift {
    double contrast_factor = 0.65;
    double noise_add = 0.04;
    double scale_factor = 0.8;
    double background_add = 0.1;
};

SynthSpec shifted(const SynthSpec& spec, const DomainShift& shift = {});

struct Sample {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> image;       // [3, H, W] in [0, 1]
    std::vector<std::uint8_t> mask;  // [H, W] in {0, 1}

    std::size_t area() const;
};

/// Sample i draws from its own stream keyed by (seed, stream, i), so any
/// subset can be regenerated independently.
Sample generate_one(const SynthSpec& spec, std::size_t index);
std::vector<Sample> generate(const SynthSpec& spec);

struct AugmentPolicy {
    double hflip = 0.5;
    double vflip = 0.5;
    double max_rotation_deg = 5.0;
};

void hflip(Sample& s);
void vflip(Sample& s);
/// Rotation about the image center; bilinear for the image (edge clamped),
/// nearest neighbour for the mask. 0 degrees is an exact identity.
void rotate(Sample& s, double degrees);
Sample augment(const Sample& s, const AugmentPolicy& policy, Rng& rng);

/// Bilinear image / nearest mask resampling to a new size.
Sample rescale(const Sample& s, std::size_t height, std::size_t width);
/// Multi-scale training sizes: base * {0.75, 1, 1.25}, rounded to multiples of 32.
std::vector<std::size_t> multiscale_sizes(std::size_t base);

/// Batch tensors: images [B, 3, H, W], masks [B, 1, H, W].
template <Real T>
Tensor<T> stack_images(const std::vector<const Sample*>& batch);
template <Real T>
Tensor<T> stack_masks(const std::vector<const Sample*>& batch);

// Corpus on disk: images/NNNN.png (RGB), masks/NNNN.png (gray, 0/255) and
// manifest.json with the generating spec.
void write_corpus(const std::filesystem::path& dir, const SynthSpec& spec, const std::vector<Sample>& samples,
                  const std::string& split);
std::vector<Sample> read_corpus(const std::filesystem::path& dir);

} // namespace skipgraph
