#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dgsr/backbone.hpp"
#include "dgsr/data_synth.hpp"
#include "dgsr/degest.hpp"
#include "dgsr/dglora.hpp"

namespace dgsr::inference {

using data::DegradationVector;

inline constexpr int kBundleFormat = 1;
inline constexpr int kMinLrSize = 8;  // LR side below this is rejected

// Frozen prior + adapters (with tuned prompts) + estimator. Immutable after
// construction; safe to share across threads.
class ModelBundle {
public:
    ModelBundle() = default;
    ModelBundle(backbone::ToyBackbone<float> net, std::optional<dglora::AdapterRegistry<float>> adapters,
                std::optional<degest::DegEstModel> estimator, nlohmann::json info = nlohmann::json::object());

    // Directory layout: prior.ckpt, adapters.ckpt, estimator.ckpt, bundle.json.
    // A missing prior is a StateError; missing adapters/estimator are allowed
    // here and reported by the calls that need them.
    static ModelBundle load(const std::filesystem::path& dir);

    // Writes the directory layout; `adapters` is the exported adapter container.
    static void assemble(const std::filesystem::path& dir, const std::filesystem::path& prior,
                         const std::filesystem::path& adapters, const std::filesystem::path& estimator);

    const backbone::ToyBackbone<float>& net() const { return net_; }
    const dglora::AdapterRegistry<float>* adapters() const { return adapters_ ? &*adapters_ : nullptr; }
    const degest::DegEstModel* estimator() const { return estimator_ ? &*estimator_ : nullptr; }
    const nlohmann::json& info() const { return info_; }
    std::string version() const;

private:
    backbone::ToyBackbone<float> net_;
    std::optional<dglora::AdapterRegistry<float>> adapters_;
    std::optional<degest::DegEstModel> estimator_;
    nlohmann::json info_;
};

// Rebuilds the registry from an "adapters" container and copies the tuned
// prompt embeddings into `net`.
dglora::AdapterRegistry<float> load_adapters(const ckpt::Container& c, backbone::ToyBackbone<float>& net);

struct InferenceRequest {
    Image lr;
    double lambda_cfg = 1.1;
    std::optional<DegradationVector> d_override;  // components clamped to [0,1]
    double noise_sigma_start = 0.0;
    std::optional<std::uint64_t> seed;
};

struct InferenceReport {
    DegradationVector d_used;
    std::optional<DegradationVector> d_estimated;
    double lambda_cfg = 1.1;
    double noise_sigma_start = 0.0;
    std::uint64_t seed = 0;
    int unet_forwards = 0;
    int estimator_calls = 0;
    double ms = 0.0;
    int width = 0;
    int height = 0;

    nlohmann::json to_json() const;
};

struct InferenceResult {
    Image sr;
    InferenceReport report;
};

// Upscales the LR input by the bundle's scale, estimates d unless overridden,
// and runs guided one-step SR. Inputs whose upscaled size is not a multiple
// of the backbone alignment are reflect-padded and cropped back.
InferenceResult super_resolve(const ModelBundle& bundle, const InferenceRequest& req);

// Estimator output for an LR image (upscaled internally).
DegradationVector estimate(const ModelBundle& bundle, const Image& lr);

// Reflect-101 padding on the bottom and right edges.
Image pad_reflect(const Image& img, int height, int width);
Image crop(const Image& img, int height, int width);

struct BatchSummary {
    int processed = 0;
    int failed = 0;
    double mean_ms = 0.0;
    std::filesystem::path manifest;
};

// Processes every regular file in `input_dir`, writing <stem>.png into
// `output_dir` plus manifest.jsonl with one record per file. A file that
// cannot be read or processed is recorded and skipped. When `reference_dir`
// is given, files with the same name there are used for PSNR-Y.
BatchSummary batch_process(const ModelBundle& bundle, const std::filesystem::path& input_dir,
                           const std::filesystem::path& output_dir, const InferenceRequest& defaults,
                           const std::optional<std::filesystem::path>& reference_dir = std::nullopt);

} // namespace dgsr::inference
