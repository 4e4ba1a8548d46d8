#include <fstream>

#include <gtest/gtest.h>

#include "dgsr/backbone.hpp"
#include "dgsr/data_synth.hpp"
#include "test_util.hpp"

using namespace dgsr;
using namespace dgsr::backbone;
using dglora::AdapterRegistry;
using dglora::ModulationConfig;
using dglora::Surface;
using dgsr::testing::check_gradient;
using dgsr::testing::random_tensor;
using dgsr::testing::TempDir;
using nn::Tensor;

namespace {

using Net = ToyBackbone<double>;

ModulationConfig small_mod() {
    ModulationConfig c;
    c.fourier_m = 4;
    c.fc_dim = 6;
    c.embed_dim = 3;
    c.hidden = 8;
    return c;
}

AdapterRegistry<double> adapters_for(const Net& net, std::set<Surface> surfaces = {Surface::Encoder, Surface::Unet},
                                     ModulationConfig mod = small_mod()) {
    return AdapterRegistry<double>::inject(net.attach_points(), surfaces, {2, 2, 2}, mod, 7);
}

void perturb(const std::vector<nn::NamedParam<double>>& params, std::uint64_t seed, double s = 0.1) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, s);
    for (const auto& p : params)
        for (auto& v : p.var->value.data) v += g(rng);
}

Tensor<double> image16(std::uint64_t seed) {
    auto t = random_tensor({3, 16, 16}, seed, 0.5);
    for (auto& v : t.data) v = std::clamp(v, -1.0, 1.0);
    return t;
}

const data::DegradationVector kD{0.3, 0.6};

} // namespace

TEST(Backbone, BlockNumberingAndAttachPoints) {
    Net net(BackboneConfig::tiny(), 1);
    const auto pts = net.attach_points();
    ASSERT_EQ(static_cast<int>(pts.size()), Net::kLayerCount);
    std::set<int> blocks;
    for (const auto& p : pts) {
        blocks.insert(p.block_index);
        EXPECT_EQ(p.rows, net.layer(p.layer_id).weight->value.dim(0));
        EXPECT_EQ(p.cols, net.layer(p.layer_id).weight->value.dim(1));
        const int expected_lo = p.surface == Surface::Encoder ? 1 : p.surface == Surface::Unet ? 3 : 11;
        const int expected_hi = p.surface == Surface::Encoder ? 2 : p.surface == Surface::Unet ? 10 : 12;
        EXPECT_GE(p.block_index, expected_lo) << p.name;
        EXPECT_LE(p.block_index, expected_hi) << p.name;
    }
    EXPECT_EQ(static_cast<int>(blocks.size()), kNumBlocks);
    EXPECT_EQ(*blocks.begin(), 1);
    EXPECT_EQ(*blocks.rbegin(), kNumBlocks);
}

TEST(Backbone, ShapesAndAlignment) {
    Net net(BackboneConfig::tiny(), 2);
    auto x = nn::constant(image16(1));
    const auto e = net.encode(x);
    EXPECT_EQ(e.z->value.shape, (nn::Shape{2, 4, 4}));
    EXPECT_EQ(net.generate(x, net.prompt(Prompt::Positive))->value.shape, (nn::Shape{3, 16, 16}));
    EXPECT_THROW(net.encode(nn::constant(Tensor<double>({3, 16, 20}))), InputError);
    EXPECT_THROW(net.encode(nn::constant(Tensor<double>({1, 16, 16}))), InputError);
}

TEST(Backbone, ZeroInitAdaptersAreNeutral) {
    Net net(BackboneConfig::tiny(), 3);
    auto reg = adapters_for(net, {Surface::Encoder, Surface::Unet, Surface::Decoder});
    const auto x = image16(2);
    const auto ad = reg.adapt(kD.d_n, kD.d_b);
    const auto plain = net.generate(nn::constant(x), net.prompt(Prompt::Positive))->value;
    const auto adapted = net.generate(nn::constant(x), net.prompt(Prompt::Positive), &ad)->value;
    EXPECT_EQ(plain, adapted);
}

TEST(Backbone, AdaptersChangeOutputOnceTrained) {
    Net net(BackboneConfig::tiny(), 3);
    auto reg = adapters_for(net);
    perturb(reg.adapter_params(), 4);
    const auto x = image16(2);
    const auto ad = reg.adapt(kD.d_n, kD.d_b);
    EXPECT_NE(net.generate(nn::constant(x), net.prompt(Prompt::Positive))->value,
              net.generate(nn::constant(x), net.prompt(Prompt::Positive), &ad)->value);
}

class CfgAlgebra : public ::testing::TestWithParam<double> {};

TEST_P(CfgAlgebra, FusionIsLinearInterpolation) {
    const double lambda = GetParam();
    Net net(BackboneConfig::tiny(), 5);
    auto reg = adapters_for(net);
    perturb(reg.params(), 6);
    const auto x = image16(3);
    InferenceTrace trace;
    CfgLatents<double> lat;
    const auto out = cfg_infer(net, &reg, x, kD, lambda, 0.0, 0, &trace, &lat);
    EXPECT_EQ(trace.encoder_forwards, 1);
    EXPECT_EQ(trace.unet_forwards, lambda == 1.0 ? 1 : 2);
    if (lambda == 1.0) {
        EXPECT_EQ(lat.z_out, lat.z_pos);
        EXPECT_EQ(out, one_step_sr(net, &reg, x, kD, Prompt::Positive));
    } else {
        for (std::size_t i = 0; i < lat.z_out.size(); ++i) {
            const double zn = lat.z_neg.data[i], zp = lat.z_pos.data[i];
            EXPECT_NEAR(lat.z_out.data[i], zn + lambda * (zp - zn), 1e-12);
        }
    }
    if (lambda == 0.0) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            EXPECT_NEAR(out.data[i], one_step_sr(net, &reg, x, kD, Prompt::Negative).data[i], 1e-12);
        }
    }
    for (double v : out.data) {
        EXPECT_GE(v, -1.0);
        EXPECT_LE(v, 1.0);
    }
}

INSTANTIATE_TEST_SUITE_P(Lambdas, CfgAlgebra, ::testing::Values(0.0, 0.5, 1.0, 1.1, 2.0),
                         [](const auto& info) { return "lambda_" + std::to_string(info.index); });

TEST(Cfg, RejectsBadArguments) {
    Net net(BackboneConfig::tiny(), 5);
    auto reg = adapters_for(net);
    const auto x = image16(3);
    EXPECT_THROW(cfg_infer(net, &reg, x, kD, -0.5), InputError);
    EXPECT_THROW(cfg_infer(net, &reg, x, kD, std::nan("")), InputError);
    EXPECT_THROW(cfg_infer(net, &reg, x, kD, 1.1, -1.0), InputError);
    EXPECT_THROW(cfg_infer<double>(net, nullptr, x, kD, 1.1), StateError);
    EXPECT_THROW(one_step_sr<double>(net, nullptr, x, kD, Prompt::Positive), StateError);
}

TEST(Cfg, LatentNoiseIsSeeded) {
    Net net(BackboneConfig::tiny(), 8);
    auto reg = adapters_for(net);
    const auto x = image16(4);
    const auto a = cfg_infer(net, &reg, x, kD, 1.1, 0.2, 11);
    EXPECT_EQ(a, cfg_infer(net, &reg, x, kD, 1.1, 0.2, 11));
    EXPECT_NE(a, cfg_infer(net, &reg, x, kD, 1.1, 0.2, 12));
    // Without noise the seed is irrelevant.
    EXPECT_EQ(cfg_infer(net, &reg, x, kD, 1.1, 0.0, 1), cfg_infer(net, &reg, x, kD, 1.1, 0.0, 2));
}

TEST(Cfg, DegradationVectorSteersOutput) {
    Net net(BackboneConfig::tiny(), 9);
    auto reg = adapters_for(net);
    perturb(reg.params(), 10, 0.3);
    const auto x = image16(5);
    EXPECT_NE(cfg_infer(net, &reg, x, {0.0, 0.0}, 1.1), cfg_infer(net, &reg, x, {1.0, 1.0}, 1.1));
}

TEST(Persistence, SaveLoadSaveIsByteIdentical) {
    TempDir dir("bb");
    Net net(BackboneConfig::tiny(), 12);
    net.save(dir / "a.ckpt");
    const auto back = Net::load(dir / "a.ckpt");
    back.save(dir / "b.ckpt");
    std::ifstream fa(dir / "a.ckpt", std::ios::binary), fb(dir / "b.ckpt", std::ios::binary);
    std::string sa{std::istreambuf_iterator<char>(fa), {}}, sb{std::istreambuf_iterator<char>(fb), {}};
    EXPECT_EQ(sa, sb);
    for (const auto& p : back.all_params()) EXPECT_FALSE(p.var->requires_grad) << p.name;
    const auto x = nn::constant(image16(6));
    EXPECT_EQ(net.generate(x, net.prompt(Prompt::Negative))->value,
              back.generate(x, back.prompt(Prompt::Negative))->value);
}

TEST(Persistence, CloneIsDeepPlainCopyShares) {
    Net net(BackboneConfig::tiny(), 13);
    const auto deep = net.clone();
    const auto shallow = net;
    net.prompt(Prompt::Positive)->value.data[0] += 1.0;
    EXPECT_NE(deep.prompt(Prompt::Positive)->value, net.prompt(Prompt::Positive)->value);
    EXPECT_EQ(shallow.prompt(Prompt::Positive)->value, net.prompt(Prompt::Positive)->value);
}

TEST(Persistence, WrongTypeIsLoadError) {
    ckpt::Container c("estimator");
    EXPECT_THROW(Net::from_container(c), LoadError);
}

TEST(Backbone, SetTrainableSplitsBaseAndPrompts) {
    Net net(BackboneConfig::tiny(), 14);
    net.set_trainable(false, true);
    for (const auto& p : net.base_params()) EXPECT_FALSE(p.var->requires_grad);
    for (const auto& p : net.prompt_params()) EXPECT_TRUE(p.var->requires_grad);
    // FiLM projections belong to the UNet group.
    bool has_film = false;
    for (const auto& p : net.unet_params()) has_film |= p.name.find(".film.") != std::string::npos;
    EXPECT_TRUE(has_film);
}

TEST(BackboneGrad, PromptsEmbeddingsModulationAndAdapters) {
    Net net(BackboneConfig::tiny(), 15);
    net.set_trainable(false, true);
    auto reg = adapters_for(net);
    perturb(reg.params(), 16, 0.2);
    const auto x = nn::constant(image16(7));
    const auto target = nn::constant(image16(8));
    auto f = [&] {
        const auto ad = reg.adapt(kD.d_n, kD.d_b);
        auto pos = net.generate(x, net.prompt(Prompt::Positive), &ad);
        auto neg = net.generate(x, net.prompt(Prompt::Negative), &ad);
        return nn::add(nn::mse(pos, target), nn::mse(neg, target));
    };
    for (const auto& p : net.prompt_params()) EXPECT_LT(check_gradient(p.var, f).rel_error, 1e-5) << p.name;
    for (const auto& [s, m] : reg.nets()) {
        for (const auto& e : m.embeddings()) EXPECT_LT(check_gradient(e, f).rel_error, 1e-5);
        for (const auto& p : m.params()) EXPECT_LT(check_gradient(p.var, f, 16).rel_error, 1e-5) << p.name;
    }
    for (const auto& p : reg.adapter_params()) EXPECT_LT(check_gradient(p.var, f, 16).rel_error, 1e-5) << p.name;
}

TEST(Pretrain, ShortRunIsFiniteAndImproves) {
    data::DatasetSpec spec;
    spec.count = 8;
    spec.hr_size = 32;
    spec.seed = 3;
    const auto ds = data::synthesize(spec);
    PretrainConfig cfg;
    cfg.ae_steps = 40;
    cfg.unet_steps = 5;
    cfg.batch_size = 2;
    cfg.backbone = BackboneConfig::tiny();
    cfg.backbone.enc_width = 8;
    cfg.backbone.dec_width = 8;
    PretrainLog log;
    const auto untrained = ToyBackbone<float>(cfg.backbone, cfg.seed);
    const double before = autoencoder_psnr(untrained, ds);
    const auto net = pretrain_base(ds, cfg, &log);
    ASSERT_EQ(log.ae_loss.size(), 40u);
    ASSERT_EQ(log.unet_loss.size(), 5u);
    for (double v : log.ae_loss) EXPECT_TRUE(std::isfinite(v));
    EXPECT_GT(autoencoder_psnr(net, ds), before);
    for (const auto& p : net.all_params()) EXPECT_FALSE(p.var->requires_grad);
}
