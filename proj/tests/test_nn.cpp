#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "dgsr/nn/adam.hpp"
#include "dgsr/nn/layers.hpp"
#include "test_util.hpp"

using namespace dgsr;
using namespace dgsr::nn;
using dgsr::testing::check_gradient;
using dgsr::testing::random_tensor;

namespace {

constexpr double kGradTol = 1e-6;

Var<double> weighted_sum(const Var<double>& y, std::uint64_t seed) {
    // Random projection so every output element gets a distinct upstream gradient.
    auto w = constant(random_tensor(y->value.shape, seed));
    return sum(mul(y, w));
}

} // namespace

TEST(Autograd, BackwardRequiresScalarRoot) {
    auto x = parameter(random_tensor({3}, 1));
    EXPECT_THROW(backward(x), InputError);
}

TEST(Autograd, SharedSubexpressionAccumulates) {
    auto x = parameter(Tensor<double>({1}, std::vector<double>{3.0}));
    auto y = mul(x, x);        // x^2
    auto z = add(y, y);        // 2 x^2
    backward(sum(z));
    EXPECT_DOUBLE_EQ(x->grad.data[0], 12.0);
}

TEST(Autograd, ConstantsReceiveNoGradient) {
    auto x = constant(random_tensor({4}, 2));
    auto w = parameter(random_tensor({4}, 3));
    backward(sum(mul(x, w)));
    EXPECT_FALSE(x->has_grad);
    EXPECT_TRUE(w->has_grad);
}

TEST(OpsGrad, Elementwise) {
    auto a = parameter(random_tensor({2, 3, 4}, 10));
    auto b = parameter(random_tensor({2, 3, 4}, 11));
    auto f = [&] {
        auto y = add(mul(silu(a), sigmoid(b)), sub(sin(a), cos(b)));
        y = add(y, scale(leaky_relu(b, 0.2), 0.7));
        return weighted_sum(y, 12);
    };
    EXPECT_LT(check_gradient(a, f).rel_error, kGradTol);
    EXPECT_LT(check_gradient(b, f).rel_error, kGradTol);
}

TEST(OpsGrad, AbsAwayFromKink) {
    auto t = random_tensor({10}, 13);
    for (auto& v : t.data) v += v > 0 ? 0.1 : -0.1;
    auto a = parameter(t);
    EXPECT_LT(check_gradient(a, [&] { return weighted_sum(nn::abs(a), 14); }).rel_error, kGradTol);
}

TEST(OpsGrad, ReductionsAndShapes) {
    auto a = parameter(random_tensor({3, 5, 6}, 20));
    auto b = parameter(random_tensor({3, 5, 6}, 21));
    auto c = parameter(random_tensor({7}, 22));
    auto f = [&] {
        auto g = global_avg_pool(a);                          // [3]
        auto cat = concat(reshape(g, {3}), c);                // [10]
        auto m = mean(mul(cat, cat));
        return add(add(m, mse(a, b)), weighted_sum(reshape(b, {90}), 23));
    };
    EXPECT_LT(check_gradient(a, f).rel_error, kGradTol);
    EXPECT_LT(check_gradient(b, f).rel_error, kGradTol);
    EXPECT_LT(check_gradient(c, f).rel_error, kGradTol);
}

TEST(OpsGrad, GlobalMaxPool) {
    // Random values have distinct maxima, so the op is differentiable there.
    auto a = parameter(random_tensor({4, 5, 3}, 31));
    auto f = [&] { return weighted_sum(global_max_pool(a), 32); };
    EXPECT_LT(check_gradient(a, f, 60).rel_error, kGradTol);
    auto pooled = global_max_pool(a);
    for (int ch = 0; ch < 4; ++ch) {
        const auto* p = a->value.ptr() + ch * 15;
        EXPECT_EQ(pooled->value.data[ch], *std::max_element(p, p + 15));
    }
}

TEST(OpsGrad, BceWithLogits) {
    for (double target : {0.0, 1.0}) {
        auto x = parameter(Tensor<double>({1}, std::vector<double>{0.37}));
        EXPECT_LT(check_gradient(x, [&] { return bce_with_logits(x, target); }).rel_error, kGradTol);
    }
}

TEST(Ops, BceMatchesDefinition) {
    for (double logit : {-30.0, -2.5, 0.0, 0.8, 40.0}) {
        const double p = 1.0 / (1.0 + std::exp(-logit));
        auto x = constant(Tensor<double>({1}, std::vector<double>{logit}));
        if (std::abs(logit) < 20) {
            EXPECT_NEAR(bce_with_logits(x, 1.0)->value.data[0], -std::log(p), 1e-12);
            EXPECT_NEAR(bce_with_logits(x, 0.0)->value.data[0], -std::log(1.0 - p), 1e-12);
        }
        EXPECT_TRUE(std::isfinite(bce_with_logits(x, 1.0)->value.data[0]));
        EXPECT_TRUE(std::isfinite(bce_with_logits(x, 0.0)->value.data[0]));
    }
    auto zero = constant(Tensor<double>({1}));
    EXPECT_NEAR(bce_with_logits(zero, 1.0)->value.data[0], std::log(2.0), 1e-15);
}

TEST(OpsGrad, MatmulAndLinear) {
    auto a = parameter(random_tensor({4, 3}, 30));
    auto b = parameter(random_tensor({3, 5}, 31));
    auto x = parameter(random_tensor({5}, 32));
    auto w = parameter(random_tensor({6, 5}, 33));
    auto bias = parameter(random_tensor({6}, 34));
    auto f = [&] { return add(weighted_sum(matmul(a, b), 35), weighted_sum(linear(x, w, bias), 36)); };
    for (const auto& p : {a, b, x, w, bias}) EXPECT_LT(check_gradient(p, f).rel_error, kGradTol);
}

// Direct-summation convolution used as the reference.
Tensor<double> conv_reference(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b, int k,
                              int stride, int pad) {
    const int c = x.dim(0), h = x.dim(1), wd = x.dim(2), o = w.dim(0);
    const int ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
    Tensor<double> out({o, ho, wo});
    for (int oc = 0; oc < o; ++oc)
        for (int y = 0; y < ho; ++y)
            for (int xx = 0; xx < wo; ++xx) {
                double s = b.data[oc];
                for (int ic = 0; ic < c; ++ic)
                    for (int ky = 0; ky < k; ++ky)
                        for (int kx = 0; kx < k; ++kx) {
                            const int iy = y * stride - pad + ky, ix = xx * stride - pad + kx;
                            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
                            s += w.data[(oc * c + ic) * k * k + ky * k + kx] * x.data[(ic * h + iy) * wd + ix];
                        }
                out.data[(oc * ho + y) * wo + xx] = s;
            }
    return out;
}

struct ConvCase {
    int c, o, k, stride, pad, h, w;
};

class ConvTest : public ::testing::TestWithParam<ConvCase> {};

TEST_P(ConvTest, MatchesDirectSummationAndGradients) {
    const auto p = GetParam();
    auto x = parameter(random_tensor({p.c, p.h, p.w}, 40));
    auto w = parameter(random_tensor({p.o, p.c * p.k * p.k}, 41));
    auto b = parameter(random_tensor({p.o}, 42));
    auto y = conv2d(x, w, b, p.k, p.stride, p.pad);
    const auto ref = conv_reference(x->value, w->value, b->value, p.k, p.stride, p.pad);
    ASSERT_EQ(y->value.shape, ref.shape);
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y->value.data[i], ref.data[i], 1e-12);
    auto f = [&] { return weighted_sum(conv2d(x, w, b, p.k, p.stride, p.pad), 43); };
    EXPECT_LT(check_gradient(x, f).rel_error, kGradTol);
    EXPECT_LT(check_gradient(w, f).rel_error, kGradTol);
    EXPECT_LT(check_gradient(b, f).rel_error, kGradTol);
}

INSTANTIATE_TEST_SUITE_P(Shapes, ConvTest,
                         ::testing::Values(ConvCase{3, 4, 3, 1, 1, 6, 5}, ConvCase{2, 3, 3, 2, 1, 8, 8},
                                           ConvCase{5, 2, 1, 1, 0, 4, 3}, ConvCase{2, 2, 3, 2, 1, 7, 5}));

TEST(OpsGrad, FilmShuffleUpsample) {
    auto x = parameter(random_tensor({4, 4, 4}, 50));
    auto gamma = parameter(random_tensor({4}, 51, 0.3));
    auto beta = parameter(random_tensor({4}, 52));
    auto f = [&] {
        auto y = film(x, gamma, beta);
        auto z = pixel_shuffle(pixel_unshuffle(y, 2), 2);
        return add(weighted_sum(upsample2(z), 53), weighted_sum(pixel_unshuffle(y, 2), 54));
    };
    for (const auto& p : {x, gamma, beta}) EXPECT_LT(check_gradient(p, f).rel_error, kGradTol);
}

TEST(Ops, PixelShuffleInvertsUnshuffle) {
    auto x = constant(random_tensor({3, 8, 12}, 60));
    auto y = pixel_shuffle(pixel_unshuffle(x, 4), 4);
    EXPECT_EQ(y->value, x->value);
    auto u = pixel_unshuffle(x, 4);
    EXPECT_EQ(u->value.shape, (Shape{48, 2, 3}));
    // Channel (c*f + dy)*f + dx holds pixel (f*y + dy, f*x + dx) of channel c.
    EXPECT_EQ(u->value.data[((1 * 4 + 2) * 4 + 3) * 6 + 1 * 3 + 2], x->value.data[(1 * 8 + 4 + 2) * 12 + 8 + 3]);
}

TEST(OpsGrad, ChannelUnitNorm) {
    auto x = parameter(random_tensor({5, 3, 3}, 70));
    auto f = [&] { return weighted_sum(channel_unit_norm(x), 71); };
    EXPECT_LT(check_gradient(x, f).rel_error, kGradTol);
    auto y = channel_unit_norm(x);
    for (int i = 0; i < 9; ++i) {
        double s = 0.0;
        for (int c = 0; c < 5; ++c) s += y->value.data[c * 9 + i] * y->value.data[c * 9 + i];
        EXPECT_NEAR(s, 1.0, 1e-9);
    }
}

TEST(OpsGrad, FourierFeaturesWrtInput) {
    auto d = parameter(Tensor<double>({2}, std::vector<double>{0.3, 0.8}));
    const auto w = random_tensor({6}, 80);
    auto f = [&] { return weighted_sum(fourier_features(d, w), 81); };
    EXPECT_LT(check_gradient(d, f).rel_error, kGradTol);
}

TEST(Ops, ReshapeRejectsWrongSize) {
    auto x = constant(random_tensor({2, 3}, 90));
    EXPECT_THROW(reshape(x, {5}), InputError);
}

TEST(Adam, MatchesHandComputedFirstStep) {
    auto p = parameter(Tensor<double>({2}, std::vector<double>{1.0, -2.0}));
    Adam<double> opt({p}, {0.1, 0.9, 0.999, 1e-8});
    backward(sum(mul(p, p)));  // grad = 2p
    opt.step();
    // First bias-corrected step moves each coordinate by lr * sign(g) (up to eps).
    EXPECT_NEAR(p->value.data[0], 1.0 - 0.1, 1e-7);
    EXPECT_NEAR(p->value.data[1], -2.0 + 0.1, 1e-7);
}

TEST(Adam, ZeroLearningRateLeavesParametersUnchanged) {
    auto p = parameter(random_tensor({8}, 100));
    const auto before = p->value;
    Adam<double> opt({p}, {0.0});
    for (int i = 0; i < 5; ++i) {
        opt.zero_grad();
        backward(sum(mul(p, p)));
        opt.step();
    }
    EXPECT_EQ(p->value, before);
}

TEST(Adam, SkipsParametersWithoutGradient) {
    auto used = parameter(random_tensor({3}, 101));
    auto unused = parameter(random_tensor({3}, 102));
    const auto before = unused->value;
    Adam<double> opt({used, unused}, {0.1});
    backward(sum(used));
    opt.step();
    EXPECT_EQ(unused->value, before);
}

TEST(Layers, ConvWeightIsFlattenedKernelMatrix) {
    std::mt19937_64 rng(5);
    Conv2d<float> c("c", {3, 8, 3, 1, 1}, rng);
    EXPECT_EQ(c.rows(), 8);
    EXPECT_EQ(c.cols(), 27);
    EXPECT_EQ(c.weight->value.shape, (Shape{8, 27}));
}
