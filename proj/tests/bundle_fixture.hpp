#pragma once

#include <filesystem>

#include "dgsr/inference.hpp"
#include "dgsr/training.hpp"

namespace dgsr::testing {

// Small but complete bundle: tiny prior, adapters after a few steps of
// tuning (so B != 0 and d actually steers), untrained estimator.
inline void write_test_bundle(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    const auto parts = dir / "parts";
    fs::create_directories(parts);

    backbone::ToyBackbone<float> prior(backbone::BackboneConfig::tiny(), 5);
    prior.set_trainable(false, false);
    prior.save(parts / "prior.ckpt");

    data::DatasetSpec spec;
    spec.count = 4;
    spec.hr_size = 32;
    spec.seed = 3;
    const auto ds = data::synthesize(spec);

    training::TrainConfig c;
    c.batch_size = 2;
    c.max_steps = 3;
    c.lr = 2e-2;
    c.p_n = 0.3;
    c.seed = 4;
    c.ranks = {2, 2, 2};
    c.modulation.fourier_m = 4;
    c.modulation.fc_dim = 6;
    c.modulation.embed_dim = 3;
    c.modulation.hidden = 8;
    c.checkpoint_every = 0;
    c.use_gt_labels = true;
    const auto res = training::fit(c, ds, prior, nullptr);
    res.state.export_adapters().save(parts / "adapters.ckpt");

    degest::DegEstModel(degest::DegEstConfig{}, 6).save(parts / "estimator.ckpt");
    inference::ModelBundle::assemble(dir, parts / "prior.ckpt", parts / "adapters.ckpt", parts / "estimator.ckpt");
}

} // namespace dgsr::testing
