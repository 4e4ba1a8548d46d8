#include <fstream>
#include <thread>

#include <gtest/gtest.h>

#include "bundle_fixture.hpp"
#include "dgsr/inference.hpp"
#include "dgsr/metrics.hpp"
#include "dgsr/png_io.hpp"
#include "test_util.hpp"

using namespace dgsr;
using namespace dgsr::inference;
using dgsr::testing::random_image;
using dgsr::testing::TempDir;

namespace {

class Inference : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = new TempDir("bundle");
        dgsr::testing::write_test_bundle(dir_->path());
        bundle_ = new ModelBundle(ModelBundle::load(dir_->path()));
    }
    static void TearDownTestSuite() {
        delete bundle_;
        delete dir_;
    }

    static InferenceRequest request(double lambda = 1.1) {
        InferenceRequest r;
        r.lr = random_image(8, 8, 21);
        r.lambda_cfg = lambda;
        r.d_override = DegradationVector{0.3, 0.6};
        return r;
    }

    static TempDir* dir_;
    static ModelBundle* bundle_;
};

TempDir* Inference::dir_ = nullptr;
ModelBundle* Inference::bundle_ = nullptr;

std::size_t line_count(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    for (std::string line; std::getline(in, line);) n += !line.empty();
    return n;
}

std::vector<nlohmann::json> read_manifest(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::vector<nlohmann::json> out;
    for (std::string line; std::getline(in, line);) {
        if (!line.empty()) out.push_back(nlohmann::json::parse(line));
    }
    return out;
}

} // namespace

TEST_F(Inference, ForwardCountsFollowLambda) {
    EXPECT_EQ(super_resolve(*bundle_, request(1.0)).report.unet_forwards, 1);
    EXPECT_EQ(super_resolve(*bundle_, request(1.1)).report.unet_forwards, 2);
    for (double l : {0.0, 0.5, 1.0, 1.1, 3.0}) {
        const auto rep = super_resolve(*bundle_, request(l)).report;
        EXPECT_GE(rep.unet_forwards, 1);
        EXPECT_LE(rep.unet_forwards, 2);
        EXPECT_EQ(rep.lambda_cfg, l);
    }
}

TEST_F(Inference, OverrideIsClampedAndSkipsEstimator) {
    auto req = request();
    req.d_override = DegradationVector{1.5, -0.2};
    const auto rep = super_resolve(*bundle_, req).report;
    EXPECT_EQ(rep.estimator_calls, 0);
    EXPECT_FALSE(rep.d_estimated.has_value());
    EXPECT_EQ(rep.d_used, (DegradationVector{1.0, 0.0}));
    EXPECT_TRUE(rep.to_json()["d_estimated"].is_null());
}

TEST_F(Inference, EstimatorRunsWithoutOverride) {
    auto req = request();
    req.d_override.reset();
    const auto rep = super_resolve(*bundle_, req).report;
    EXPECT_EQ(rep.estimator_calls, 1);
    ASSERT_TRUE(rep.d_estimated.has_value());
    EXPECT_EQ(rep.d_used, *rep.d_estimated);
    EXPECT_EQ(rep.d_used, estimate(*bundle_, req.lr));
}

TEST_F(Inference, OutputShapeAndRange) {
    auto req = request();
    req.lr = random_image(9, 13, 22);  // 36x52 after upscaling: padded to 48x64, then cropped
    const auto res = super_resolve(*bundle_, req);
    EXPECT_EQ(res.sr.height, 36);
    EXPECT_EQ(res.sr.width, 52);
    EXPECT_EQ(res.report.height, 36);
    EXPECT_EQ(res.report.width, 52);
    for (float v : res.sr.data) {
        EXPECT_GE(v, -1.0f);
        EXPECT_LE(v, 1.0f);
    }
    EXPECT_GE(res.report.ms, 0.0);
}

TEST_F(Inference, DeterministicAndSeeded) {
    const auto a = super_resolve(*bundle_, request());
    const auto b = super_resolve(*bundle_, request());
    EXPECT_EQ(a.sr, b.sr);

    auto noisy = request();
    noisy.noise_sigma_start = 0.3;
    noisy.seed = 5;
    const auto n1 = super_resolve(*bundle_, noisy);
    const auto n2 = super_resolve(*bundle_, noisy);
    EXPECT_EQ(n1.sr, n2.sr);
    EXPECT_EQ(n1.report.seed, 5u);
    noisy.seed = 6;
    EXPECT_NE(super_resolve(*bundle_, noisy).sr, n1.sr);
}

TEST_F(Inference, DegradationOverrideSteersOutput) {
    auto lo = request();
    lo.d_override = DegradationVector{0.0, 0.0};
    auto hi = request();
    hi.d_override = DegradationVector{1.0, 1.0};
    const auto a = super_resolve(*bundle_, lo).sr;
    const auto b = super_resolve(*bundle_, hi).sr;
    double diff = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) diff += std::abs(a.data[i] - b.data[i]);
    EXPECT_GT(diff / a.data.size(), 0.0);
}

TEST_F(Inference, ConcurrentRequestsMatchSerial) {
    auto req = request();
    req.noise_sigma_start = 0.2;
    req.seed = 11;
    const auto serial = super_resolve(*bundle_, req).sr;
    Image r1, r2;
    std::thread t1([&] { r1 = super_resolve(*bundle_, req).sr; });
    std::thread t2([&] { r2 = super_resolve(*bundle_, req).sr; });
    t1.join();
    t2.join();
    EXPECT_EQ(r1, serial);
    EXPECT_EQ(r2, serial);
}

TEST_F(Inference, InvalidRequests) {
    auto req = request();
    req.lr = random_image(7, 20, 1);
    EXPECT_THROW(super_resolve(*bundle_, req), InputError);
    req.lr = Image(8, 8, 1);
    EXPECT_THROW(super_resolve(*bundle_, req), InputError);
    req = request();
    req.lambda_cfg = -0.5;
    EXPECT_THROW(super_resolve(*bundle_, req), InputError);
    req = request();
    req.noise_sigma_start = -1;
    EXPECT_THROW(super_resolve(*bundle_, req), InputError);
    EXPECT_NO_THROW(super_resolve(*bundle_, request()));  // 8x8 is the smallest accepted input
}

TEST(Padding, ReflectMatchesIndexOracle) {
    const auto img = random_image(3, 4, 7);
    const auto p = pad_reflect(img, 6, 9);
    // Reflect-101 on the bottom/right edge: index n-1+k maps to n-1-k.
    const int ys[] = {0, 1, 2, 1, 0, 1};
    const int xs[] = {0, 1, 2, 3, 2, 1, 0, 1, 2};
    for (int y = 0; y < 6; ++y) {
        for (int x = 0; x < 9; ++x) {
            for (int c = 0; c < 3; ++c) ASSERT_EQ(p.at(y, x, c), img.at(ys[y], xs[x], c)) << y << "," << x;
        }
    }
    EXPECT_EQ(crop(p, 3, 4), img);
    EXPECT_EQ(pad_reflect(img, 3, 4), img);
    EXPECT_THROW(pad_reflect(img, 2, 4), InputError);
    EXPECT_THROW(crop(img, 4, 4), InputError);
}

TEST(Bundle, MissingPiecesAreStateErrors) {
    TempDir dir("partial");
    EXPECT_THROW(ModelBundle::load(dir / "nope"), StateError);
    EXPECT_THROW(ModelBundle::load(dir.path()), StateError);

    backbone::ToyBackbone<float> prior(backbone::BackboneConfig::tiny(), 1);
    prior.save(dir / "prior.ckpt");
    const auto only_prior = ModelBundle::load(dir.path());
    EXPECT_EQ(only_prior.adapters(), nullptr);
    EXPECT_EQ(only_prior.estimator(), nullptr);
    InferenceRequest req;
    req.lr = random_image(8, 8, 2);
    EXPECT_THROW(super_resolve(only_prior, req), StateError);
    EXPECT_THROW(estimate(only_prior, req.lr), StateError);
    EXPECT_FALSE(only_prior.info()["has_adapters"].get<bool>());
}

TEST(Bundle, AssembleValidatesBeforeWriting) {
    TempDir dir("assemble");
    backbone::ToyBackbone<float> prior(backbone::BackboneConfig::tiny(), 1);
    prior.save(dir / "prior.ckpt");
    degest::DegEstModel(degest::DegEstConfig{}, 1).save(dir / "est.ckpt");
    // A prior is not an adapters checkpoint.
    EXPECT_THROW(ModelBundle::assemble(dir / "out", dir / "prior.ckpt", dir / "prior.ckpt", dir / "est.ckpt"),
                 LoadError);
    EXPECT_FALSE(std::filesystem::exists(dir / "out"));
}

TEST(Bundle, LoadsWithoutEstimatorWhenOverrideGiven) {
    TempDir dir("noest");
    dgsr::testing::write_test_bundle(dir.path());
    std::filesystem::remove(dir / "estimator.ckpt");
    const auto b = ModelBundle::load(dir.path());
    EXPECT_EQ(b.version(), "dgsr-bundle-1");
    EXPECT_EQ(b.info()["scale"], 4);
    InferenceRequest req;
    req.lr = random_image(8, 8, 3);
    EXPECT_THROW(super_resolve(b, req), StateError);
    req.d_override = DegradationVector{0.5, 0.5};
    EXPECT_EQ(super_resolve(b, req).report.d_used, (DegradationVector{0.5, 0.5}));
}

TEST_F(Inference, BatchEmptyDirectory) {
    TempDir dir("batch_empty");
    std::filesystem::create_directories(dir / "in");
    const auto s = batch_process(*bundle_, dir / "in", dir / "out", request());
    EXPECT_EQ(s.processed, 0);
    EXPECT_EQ(s.failed, 0);
    EXPECT_TRUE(std::filesystem::exists(s.manifest));
    EXPECT_EQ(line_count(s.manifest), 0u);
    EXPECT_THROW(batch_process(*bundle_, dir / "missing", dir / "out", request()), InputError);
}

TEST_F(Inference, BatchIsolatesCorruptFiles) {
    TempDir dir("batch");
    std::filesystem::create_directories(dir / "in");
    std::filesystem::create_directories(dir / "ref");
    png::write(dir / "in" / "a.png", quantized(random_image(8, 8, 30)));
    png::write(dir / "in" / "c.png", quantized(random_image(8, 12, 31)));
    png::write_file(dir / "in" / "b.png", {'n', 'o', 't', ' ', 'p', 'n', 'g'});
    png::write(dir / "ref" / "a.png", quantized(random_image(32, 32, 32)));

    const auto s = batch_process(*bundle_, dir / "in", dir / "out", request(1.0), dir / "ref");
    EXPECT_EQ(s.processed, 2);
    EXPECT_EQ(s.failed, 1);
    EXPECT_GT(s.mean_ms, 0.0);
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / "a.png"));
    EXPECT_TRUE(std::filesystem::exists(dir / "out" / "c.png"));
    EXPECT_FALSE(std::filesystem::exists(dir / "out" / "b.png"));

    const auto m = read_manifest(s.manifest);
    ASSERT_EQ(m.size(), 3u);
    EXPECT_EQ(m[0]["file"], "a.png");
    EXPECT_EQ(m[0]["status"], "ok");
    EXPECT_EQ(m[0]["forwards"], 1);
    EXPECT_EQ(m[0]["lambda_cfg"], 1.0);
    EXPECT_EQ(m[0]["estimator_calls"], 0);
    EXPECT_TRUE(m[0]["psnr_y"].is_number());
    EXPECT_EQ(m[1]["file"], "b.png");
    EXPECT_EQ(m[1]["status"], "error");
    EXPECT_FALSE(m[1]["error"].get<std::string>().empty());
    EXPECT_EQ(m[2]["status"], "ok");
    EXPECT_TRUE(m[2]["psnr_y"].is_null());
    EXPECT_EQ(png::read(dir / "out" / "c.png").width, 48);
}
