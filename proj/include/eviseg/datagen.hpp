#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "eviseg/tensor.hpp"

namespace eviseg {

// Desk-scale synthetic segmentation imagery: soft-edged blobs or rings on a
// flat background with texture noise, one foreground shape per non-background
// class. Images come out normalized to zero mean / unit variance.
struct SyntheticSpec {
    std::size_t height = 32;
    std::size_t width = 32;
    std::size_t num_classes = 2;
    enum class Family { kBlobs, kRings, kBoth };
    Family family = Family::kBlobs;
    double fg_min = 0.05;   // foreground fraction range (union over classes)
    double fg_max = 0.35;
    double texture_noise = 0.3;
    std::uint64_t seed = 0;

    void validate() const;
};

struct Sample {
    Tensor image;  // [1,H,W], normalized
    Tensor label;  // [H,W] class ids
    std::uint64_t id = 0;
};

using Dataset = std::vector<Sample>;

Dataset generate(const SyntheticSpec& spec, std::size_t count);

// ---- degradation operators (pure per image given the seed) ----

// x + N(0, sigma^2) i.i.d. per element; sigma == 0 returns the input bitwise.
Tensor add_gaussian_noise(const Tensor& image, double sigma, std::uint64_t seed);

// Separable Gaussian blur over the trailing two axes, kernel normalized to
// sum 1, mirror padding at the borders. Even kernel sizes are bumped up by
// one; sigma <= 0 returns the input unchanged.
Tensor add_gaussian_blur(const Tensor& image, double sigma, int kernel_size);

// Zeroes round(ratio * num_patches) patches of the given size chosen
// uniformly without replacement; partial border patches count as patches.
Tensor add_random_mask(const Tensor& image, double ratio, std::size_t patch,
                       std::uint64_t seed);

struct DegradationSpec {
    enum class Kind { kNone, kGaussianNoise, kGaussianBlur, kRandomMask };
    Kind kind = Kind::kNone;
    double sigma = 0.0;      // noise or blur
    int kernel_size = 0;     // blur
    double mask_ratio = 0.0;
    std::size_t patch = 8;
    std::uint64_t seed = 0;

    Tensor apply(const Tensor& image) const;
    std::string label() const;  // e.g. "noise:0.20"
    // "none" | "noise:SIGMA" | "blur:SIGMA:K" | "mask:RATIO"
    static DegradationSpec parse(const std::string& text, std::uint64_t seed);
};

// ---- image & dataset I/O ----

// 8-bit binary PGM (P5). Values map linearly lo->0, hi->255 with
// round-half-up; the reader returns values in [0,1].
void write_pgm(const Tensor& image, const std::string& path, double lo = 0.0,
               double hi = 1.0);
Tensor read_pgm(const std::string& path);

std::uint64_t fnv1a64(const void* data, std::size_t size);
std::uint64_t checksum_file(const std::string& path);

// Dataset directory: img_NNNN.tns / lbl_NNNN.tns plus manifest.json listing
// every file with its content checksum.
void save_dataset(const Dataset& data, const SyntheticSpec& spec, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace eviseg
