#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dgsr/checkpoint.hpp"
#include "dgsr/data_synth.hpp"
#include "dgsr/image.hpp"
#include "dgsr/nn/layers.hpp"

// Small convolutional regressor from an LR image to (d_n, d_b).
namespace dgsr::degest {

using data::DegradationVector;

struct DegEstConfig {
    std::vector<int> widths{32, 32, 64, 64, 64};
    std::vector<int> strides{1, 2, 2, 2, 2};
    double leaky_slope = 0.2;
    bool max_pool = true;  // head sees [avg, max] pooled features instead of avg only
};

class DegEstModel {
public:
    DegEstModel() = default;
    DegEstModel(const DegEstConfig& cfg, std::uint64_t seed);

    const DegEstConfig& config() const { return cfg_; }
    bool trained() const { return trained_; }
    void mark_trained(bool t) { trained_ = t; }

    // x: [3,H,W] -> [2], squashed into (0,1).
    nn::Var<float> forward(const nn::Var<float>& x) const;

    // `lr` is the LR image at its native size. Raises InputError on a non-RGB input.
    DegradationVector estimate(const Image& lr) const;

    std::vector<nn::NamedParam<float>> params() const;
    std::size_t parameter_count() const { return nn::count_values(params()); }

    ckpt::Container to_container() const;
    static DegEstModel from_container(const ckpt::Container& c);
    void save(const std::filesystem::path& path) const;
    static DegEstModel load(const std::filesystem::path& path);

private:
    DegEstConfig cfg_;
    std::vector<nn::Conv2d<float>> convs_;
    nn::Linear<float> head_;
    bool trained_ = false;
};

struct EstimatorTrainConfig {
    int steps = 20000;
    int batch_size = 16;
    double lr = 3e-3;
    std::uint64_t seed = 0;
    int checkpoint_every = 0;                // 0 disables periodic checkpoints
    std::filesystem::path checkpoint_path;   // written every checkpoint_every steps
    DegEstConfig model;
    // Re-degrade the HR images with freshly drawn parameters (and a random
    // flip/transpose) for every sample instead of reusing the stored LR/label
    // pairs. Needs the HR images.
    bool online_degradation = true;
    bool cosine_lr = true;  // decay lr to 0 over `steps`
    bool verbose = false;
};

struct EstimatorLog {
    std::vector<double> mae;  // per-step batch MAE (mean over both components)
};

DegEstModel train_estimator(const data::Dataset& dataset, const EstimatorTrainConfig& config,
                            EstimatorLog* log = nullptr);

// Continues training an existing model in place.
void train_estimator_into(DegEstModel& model, const data::Dataset& dataset, const EstimatorTrainConfig& config,
                          EstimatorLog* log = nullptr);

// Per-component mean absolute error on a labelled set.
DegradationVector mean_abs_error(const DegEstModel& model, const data::Dataset& dataset, int max_items = -1);

} // namespace dgsr::degest
