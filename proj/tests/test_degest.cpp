#include <gtest/gtest.h>

#include "dgsr/degest.hpp"
#include "test_util.hpp"

using namespace dgsr;
using namespace dgsr::degest;
using dgsr::testing::TempDir;

namespace {

data::Dataset tiny_set(int count, std::uint64_t seed) {
    data::DatasetSpec spec;
    spec.count = count;
    spec.hr_size = 32;
    spec.seed = seed;
    return data::synthesize(spec);
}

std::vector<nn::Tensor<float>> snapshot(const DegEstModel& m) {
    std::vector<nn::Tensor<float>> out;
    for (const auto& p : m.params()) out.push_back(p.var->value);
    return out;
}

} // namespace

TEST(Estimator, OutputsLieInUnitSquare) {
    DegEstModel m(DegEstConfig{}, 1);
    for (std::uint64_t s = 0; s < 5; ++s) {
        const auto d = m.estimate(dgsr::testing::random_image(32, 48, s));
        EXPECT_GE(d.d_n, 0.0);
        EXPECT_LE(d.d_n, 1.0);
        EXPECT_GE(d.d_b, 0.0);
        EXPECT_LE(d.d_b, 1.0);
    }
}

TEST(Estimator, DeterministicAndRejectsNonRgb) {
    DegEstModel m(DegEstConfig{}, 2);
    const auto img = dgsr::testing::random_image(32, 32, 9);
    EXPECT_EQ(m.estimate(img), m.estimate(img));
    EXPECT_THROW(m.estimate(Image(32, 32, 1)), InputError);
    DegEstConfig empty;
    empty.widths.clear();
    empty.strides.clear();
    EXPECT_THROW(DegEstModel(empty, 0), InputError);
    DegEstConfig mismatched;
    mismatched.strides.pop_back();
    EXPECT_THROW(DegEstModel(mismatched, 0), InputError);
}

TEST(Estimator, ParameterCount) {
    for (bool max_pool : {false, true}) {
        DegEstConfig cfg;
        cfg.max_pool = max_pool;
        DegEstModel m(cfg, 3);
        std::size_t expected = 0;
        int in = 3;
        for (int w : {32, 32, 64, 64, 64}) {
            expected += static_cast<std::size_t>(in * 9 + 1) * w;
            in = w;
        }
        expected += (max_pool ? 128 : 64) * 2 + 2;
        EXPECT_EQ(m.parameter_count(), expected);
    }
}

TEST(Estimator, ZeroLearningRateLeavesWeightsUnchanged) {
    const auto ds = tiny_set(4, 1);
    EstimatorTrainConfig cfg;
    cfg.steps = 3;
    cfg.batch_size = 2;
    cfg.lr = 0.0;
    cfg.seed = 5;
    const auto fresh = DegEstModel(cfg.model, cfg.seed);
    const auto trained = train_estimator(ds, cfg);
    EXPECT_EQ(snapshot(trained), snapshot(fresh));
    EXPECT_TRUE(trained.trained());
    EXPECT_FALSE(fresh.trained());
}

TEST(Estimator, TrainingIsDeterministic) {
    const auto ds = tiny_set(4, 2);
    EstimatorTrainConfig cfg;
    cfg.steps = 4;
    cfg.batch_size = 2;
    cfg.seed = 6;
    EXPECT_EQ(snapshot(train_estimator(ds, cfg)), snapshot(train_estimator(ds, cfg)));
}

TEST(Estimator, MemorisesASingleItem) {
    const auto ds = tiny_set(1, 3);
    EstimatorTrainConfig cfg;
    cfg.steps = 400;
    cfg.batch_size = 1;
    cfg.lr = 1e-3;
    cfg.seed = 7;
    cfg.online_degradation = false;
    EstimatorLog log;
    const auto m = train_estimator(ds, cfg, &log);
    const auto err = mean_abs_error(m, ds);
    EXPECT_LT(err.d_n, 0.02);
    EXPECT_LT(err.d_b, 0.02);
    EXPECT_EQ(log.mae.size(), 400u);
}

TEST(Estimator, SaveLoadAndPeriodicCheckpoint) {
    TempDir dir("est");
    const auto ds = tiny_set(2, 4);
    EstimatorTrainConfig cfg;
    cfg.steps = 4;
    cfg.batch_size = 1;
    cfg.checkpoint_every = 2;
    cfg.checkpoint_path = dir / "periodic.ckpt";
    const auto m = train_estimator(ds, cfg);
    EXPECT_TRUE(std::filesystem::exists(cfg.checkpoint_path));
    m.save(dir / "final.ckpt");
    const auto back = DegEstModel::load(dir / "final.ckpt");
    EXPECT_TRUE(back.trained());
    const auto& img = ds.items[0].lr;
    EXPECT_EQ(back.estimate(img), m.estimate(img));
    EXPECT_EQ(back.config().widths, m.config().widths);
    EXPECT_EQ(back.config().strides, m.config().strides);
    EXPECT_EQ(back.config().max_pool, m.config().max_pool);
    ckpt::Container wrong("backbone");
    wrong.save(dir / "wrong.ckpt");
    EXPECT_THROW(DegEstModel::load(dir / "wrong.ckpt"), LoadError);
}

TEST(Estimator, OnlineDegradationDrawsFreshPairs) {
    auto ds = tiny_set(3, 5);
    EstimatorTrainConfig cfg;
    cfg.steps = 3;
    cfg.batch_size = 2;
    cfg.seed = 8;
    cfg.online_degradation = true;
    const auto online = snapshot(train_estimator(ds, cfg));
    EXPECT_EQ(online, snapshot(train_estimator(ds, cfg)));
    cfg.online_degradation = false;
    EXPECT_NE(online, snapshot(train_estimator(ds, cfg)));
    // Stored pairs do not need the HR images; fresh draws do.
    for (auto& item : ds.items) item.hr = Image();
    EXPECT_NO_THROW(train_estimator(ds, cfg));
    cfg.online_degradation = true;
    EXPECT_THROW(train_estimator(ds, cfg), InputError);
}

TEST(Estimator, EmptyDatasetIsInputError) {
    data::Dataset empty;
    EXPECT_THROW(train_estimator(empty, EstimatorTrainConfig{}), InputError);
    EXPECT_THROW(mean_abs_error(DegEstModel(DegEstConfig{}, 0), empty), InputError);
}
