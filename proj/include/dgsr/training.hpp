#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgsr/backbone.hpp"
#include "dgsr/data_synth.hpp"
#include "dgsr/degest.hpp"
#include "dgsr/dglora.hpp"
#include "dgsr/losses.hpp"
#include "dgsr/nn/adam.hpp"

namespace dgsr::training {

using backbone::Prompt;
using backbone::ToyBackbone;
using dglora::ModulationMode;
using dglora::Surface;

struct TrainConfig {
    double p_n = 0.05;
    int batch_size = 16;
    double lr = 2e-5;
    double disc_lr = -1.0;  // < 0: same as lr
    long long max_steps = 2000;
    std::uint64_t seed = 0;
    losses::LossWeights weights;
    dglora::RankMap ranks;
    std::set<Surface> surfaces{Surface::Encoder, Surface::Unet};
    dglora::ModulationConfig modulation;
    long long checkpoint_every = 500;  // 0 disables periodic checkpoints
    bool use_gt_labels = false;        // feed dataset labels instead of the estimator's d
    std::uint64_t perceptual_seed = 1234;
    long long eval_every = 0;          // 0 disables in-loop evaluation
    int eval_items = 50;
    double lambda_cfg = 1.1;
    std::string lr_schedule = "constant";  // "constant" or "cosine" (decays to 0 at max_steps)

    double discriminator_lr() const { return disc_lr < 0.0 ? lr : disc_lr; }
    // Multiplier on both learning rates for the update that produces step `step + 1`.
    double lr_scale(long long step) const;
    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
    static TrainConfig load(const std::filesystem::path& path);
};

struct Batch {
    std::vector<std::size_t> indices;  // dataset indices
    std::vector<Image> input;          // upscaled LR
    std::vector<Image> target;         // HR, or the upscaled LR for negatives
    std::vector<Prompt> prompt;
    std::vector<bool> positive;

    int size() const { return static_cast<int>(indices.size()); }
    int n_pos() const;
};

// Online negative prompting: each item independently becomes a negative
// sample (target = its own upscaled LR, negative prompt) with probability p_n.
Batch assemble_batch(const data::Dataset& dataset, const std::vector<std::size_t>& indices, double p_n,
                     std::mt19937_64& rng);

struct StepMetrics {
    long long step = 0;
    double l2 = 0.0;
    double lpips = 0.0;
    double g_gan = 0.0;
    double d_gan = 0.0;
    double total = 0.0;
    int n_pos = 0;
    int n_neg = 0;

    nlohmann::json to_json() const;
    static StepMetrics from_json(const nlohmann::json& j);
    bool operator==(const StepMetrics&) const = default;
};

class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(long long step, std::vector<std::size_t> indices);
    const std::vector<std::size_t>& indices() const { return indices_; }

private:
    std::vector<std::size_t> indices_;
};

// Everything that changes during SR fine-tuning plus the frozen references it
// needs. `net` is a private copy of the prior in which only the prompt
// embeddings are trainable.
struct TrainState {
    TrainConfig config;
    ToyBackbone<float> net;
    dglora::AdapterRegistry<float> adapters;
    losses::Discriminator<float> disc;
    losses::PerceptualNet<float> perceptual;
    nn::Adam<float> gen_opt;
    nn::Adam<float> disc_opt;
    long long step = 0;
    std::mt19937_64 rng;

    static TrainState create(const TrainConfig& config, const ToyBackbone<float>& prior);

    std::vector<nn::NamedParam<float>> generator_params() const;

    ckpt::Container to_container() const;
    static TrainState from_container(const ckpt::Container& c, const ToyBackbone<float>& prior);
    void save(const std::filesystem::path& path) const;
    static TrainState load(const std::filesystem::path& path, const ToyBackbone<float>& prior);

    // Adapters, modulation nets and tuned prompt embeddings (type "adapters").
    ckpt::Container export_adapters() const;
};

// Supplies d per dataset item: the frozen estimator's output (cached) or the
// ground-truth label.
class DegradationSource {
public:
    DegradationSource(const data::Dataset& dataset, const degest::DegEstModel* estimator, bool use_labels);
    // d for dataset item `index`: its label, or the estimate from its LR image.
    data::DegradationVector operator()(std::size_t index);

private:
    const data::Dataset& dataset_;
    const degest::DegEstModel* estimator_;
    bool use_labels_;
    std::vector<std::optional<data::DegradationVector>> cache_;
};

// One generator update followed by one discriminator-head update.
StepMetrics train_step(TrainState& state, const Batch& batch, DegradationSource& degradation);

struct FitOptions {
    std::filesystem::path out_dir;     // train_log.jsonl, state.ckpt, adapters.ckpt
    bool resume = false;               // continue from out_dir/state.ckpt if present
    long long stop_at = -1;            // stop (and save state) after this step
    const data::Dataset* eval_set = nullptr;
    bool verbose = false;
};

struct FitResult {
    TrainState state;
    std::vector<StepMetrics> log;
};

FitResult fit(const TrainConfig& config, const data::Dataset& dataset, const ToyBackbone<float>& prior,
              const degest::DegEstModel* estimator, const FitOptions& options = {});

// Mean PSNR-Y / perceptual distance of guided SR output against HR on a
// labelled set; d comes from `degradation`.
struct Validation {
    double psnr_y = 0.0;
    double bicubic_psnr_y = 0.0;
    double perceptual = 0.0;
};

Validation validate(const TrainState& state, const data::Dataset& dataset, DegradationSource& degradation,
                    double lambda_cfg, int max_items = -1);

} // namespace dgsr::training
