#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dgsr/image.hpp"

namespace dgsr::data {

inline constexpr int kPipelineVersion = 1;
inline constexpr int kScale = 4;
inline constexpr int kHrSize = 128;

struct DegradationParams {
    double blur_sigma = 0.0;   // Gaussian blur std on the HR grid, pixels
    double noise_sigma = 0.0;  // additive Gaussian noise std, [-1,1] value units
    int scale = kScale;
    std::uint64_t seed = 0;
};

// Quantified degradation: d_n (noise) and d_b (blur), each in [0,1].
struct DegradationVector {
    double d_n = 0.0;
    double d_b = 0.0;

    static DegradationVector clamped(double n, double b);
    bool operator==(const DegradationVector&) const = default;
};

struct DegradationLimits {
    double blur_sigma_max = 4.0;
    double noise_sigma_max = 0.2;
};

struct Degraded {
    Image lr;
    DegradationVector label;
};

// Label convention: sigmas normalised by the configured maxima, clamped.
DegradationVector label_for(const DegradationParams& params, const DegradationLimits& limits);

// Separable Gaussian blur, kernel radius ceil(3 sigma), reflect-101 borders.
// sigma == 0 returns the input unchanged.
Image gaussian_blur(const Image& img, double sigma);

// Catmull-Rom (a = -0.5) resampling with half-pixel centres and reflect-101
// borders; no antialiasing prefilter. Output is clamped to [-1, 1].
Image resize_bicubic(const Image& img, int out_height, int out_width);

// Bicubic x`scale` upsample; scale 1 is an exact copy.
Image upscale_lr(const Image& lr, int scale);

// Adds N(0, sigma^2) per value, drawn in HWC order from mt19937_64(seed), then clamps.
void add_gaussian_noise(Image& img, double sigma, std::uint64_t seed);

// blur -> bicubic downsample -> additive noise -> clamp.
Degraded degrade(const Image& hr, const DegradationParams& params, const DegradationLimits& limits = {});

// Mixture of filtered noise, oriented sinusoids and antialiased polygons.
Image procedural_texture(std::uint64_t seed, int size = kHrSize);

// Independent 64-bit seed for item `index` of a dataset seeded with `seed`.
std::uint64_t item_seed(std::uint64_t seed, std::uint64_t index);

struct ParamRanges {
    double blur_lo = 0.0;
    double blur_hi = 4.0;
    double noise_lo = 0.0;
    double noise_hi = 0.2;
};

struct DatasetSpec {
    int count = 0;
    std::string source = "procedural";  // or a directory of PNG images
    ParamRanges ranges;
    DegradationLimits limits;
    std::uint64_t seed = 0;
    int hr_size = kHrSize;
    int scale = kScale;
};

struct DatasetItem {
    Image hr;
    Image lr;
    DegradationVector label;
    DegradationParams params;
    std::string hr_file;
    std::string lr_file;
};

struct Dataset {
    DatasetSpec spec;
    int pipeline_version = kPipelineVersion;
    std::vector<DatasetItem> items;

    std::size_t size() const { return items.size(); }
    bool empty() const { return items.empty(); }
};

// Draws the degradation parameters for one item (uniform in the ranges).
DegradationParams sample_params(const DatasetSpec& spec, std::uint64_t index);

// In-memory synthesis; LR images are snapped to the 8-bit grid so the result
// matches what load_dataset() returns for the same spec.
Dataset synthesize(const DatasetSpec& spec);

// Writes hr/NNNNN.png, lr/NNNNN.png and manifest.txt under `dir`.
Dataset make_dataset(const DatasetSpec& spec, const std::filesystem::path& dir);

Dataset load_dataset(const std::filesystem::path& dir);

} // namespace dgsr::data
