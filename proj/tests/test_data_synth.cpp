#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "dgsr/data_synth.hpp"
#include "dgsr/metrics.hpp"
#include "dgsr/png_io.hpp"
#include "test_util.hpp"

using namespace dgsr;
using namespace dgsr::data;
using dgsr::testing::TempDir;

namespace {

// ---- straight-line reference pipeline --------------------------------------

int mirror(int i, int n) {
    if (n == 1) return 0;
    while (i < 0 || i >= n) {
        if (i < 0) i = -i;
        if (i >= n) i = 2 * n - 2 - i;
    }
    return i;
}

double keys(double t) {
    const double a = -0.5;
    t = std::fabs(t);
    if (t < 1.0) return (a + 2) * t * t * t - (a + 3) * t * t + 1;
    if (t < 2.0) return a * t * t * t - 5 * a * t * t + 8 * a * t - 4 * a;
    return 0.0;
}

std::vector<double> ref_blur(const Image& img, double sigma) {
    std::vector<double> out(img.size());
    if (sigma == 0.0) {
        for (std::size_t i = 0; i < img.size(); ++i) out[i] = img.data[i];
        return out;
    }
    const int r = static_cast<int>(std::ceil(3 * sigma));
    // Full 2-D kernel, normalised as a whole.
    std::vector<double> k((2 * r + 1) * (2 * r + 1));
    double total = 0;
    for (int dy = -r; dy <= r; ++dy)
        for (int dx = -r; dx <= r; ++dx) {
            const double v = std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            k[(dy + r) * (2 * r + 1) + dx + r] = v;
            total += v;
        }
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) {
                double s = 0;
                for (int dy = -r; dy <= r; ++dy)
                    for (int dx = -r; dx <= r; ++dx)
                        s += k[(dy + r) * (2 * r + 1) + dx + r] *
                             img.at(mirror(y + dy, img.height), mirror(x + dx, img.width), c);
                out[img.index(y, x, c)] = std::clamp(s / total, -1.0, 1.0);
            }
    return out;
}

std::vector<double> ref_resize(const std::vector<double>& src, int h, int w, int oh, int ow) {
    std::vector<double> out(static_cast<std::size_t>(oh) * ow * 3);
    for (int y = 0; y < oh; ++y) {
        const double sy = (y + 0.5) * h / oh - 0.5;
        const int y0 = static_cast<int>(std::floor(sy));
        for (int x = 0; x < ow; ++x) {
            const double sx = (x + 0.5) * w / ow - 0.5;
            const int x0 = static_cast<int>(std::floor(sx));
            for (int c = 0; c < 3; ++c) {
                double s = 0;
                for (int j = y0 - 1; j <= y0 + 2; ++j)
                    for (int i = x0 - 1; i <= x0 + 2; ++i)
                        s += keys(sy - j) * keys(sx - i) *
                             src[(static_cast<std::size_t>(mirror(j, h)) * w + mirror(i, w)) * 3 + c];
                out[(static_cast<std::size_t>(y) * ow + x) * 3 + c] = std::clamp(s, -1.0, 1.0);
            }
        }
    }
    return out;
}

std::vector<double> ref_degrade(const Image& hr, double blur, double noise, std::uint64_t seed) {
    auto b = ref_blur(hr, blur);
    auto lr = ref_resize(b, hr.height, hr.width, hr.height / 4, hr.width / 4);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g(0.0, noise);
    if (noise > 0)
        for (auto& v : lr) v = std::clamp(v + g(rng), -1.0, 1.0);
    return lr;
}

Image gradient_image(int h, int w) {
    Image img(h, w, 3);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            img.at(y, x, 0) = -0.9f + 1.8f * x / (w - 1);
            img.at(y, x, 1) = -0.9f + 1.8f * y / (h - 1);
            img.at(y, x, 2) = 0.5f * std::sin(0.3f * x + 0.2f * y);
        }
    return img;
}

std::vector<std::uint8_t> slurp(const std::filesystem::path& p) { return png::read_file(p); }

} // namespace

TEST(Degrade, IdentityDegradationIsPlainBicubicDownsample) {
    const auto hr = procedural_texture(3, 64);
    DegradationParams p;
    const auto out = degrade(hr, p);
    EXPECT_EQ(out.label, (DegradationVector{0.0, 0.0}));
    EXPECT_EQ(out.lr, resize_bicubic(hr, 16, 16));
}

TEST(Degrade, MaximaMapToOne) {
    const auto hr = procedural_texture(4, 32);
    DegradationParams p;
    p.blur_sigma = 4.0;
    p.noise_sigma = 0.2;
    EXPECT_EQ(degrade(hr, p).label, (DegradationVector{1.0, 1.0}));
}

TEST(Degrade, MatchesStraightLineReference) {
    const auto hr = procedural_texture(11, 64);
    DegradationParams p;
    p.blur_sigma = 0.5 * 4.0;
    p.noise_sigma = 0.25 * 0.2;
    p.seed = 1234;
    const auto out = degrade(hr, p);
    const auto ref = ref_degrade(hr, p.blur_sigma, p.noise_sigma, p.seed);
    ASSERT_EQ(out.lr.size(), ref.size());
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(out.lr.data[i] - ref[i]));
    EXPECT_LT(worst, 1e-6);
    EXPECT_DOUBLE_EQ(out.label.d_b, 0.5);
    EXPECT_DOUBLE_EQ(out.label.d_n, 0.25);
}

TEST(Degrade, RejectsBadInputs) {
    const auto hr = procedural_texture(5, 32);
    DegradationParams p;
    p.blur_sigma = -0.1;
    EXPECT_THROW(degrade(hr, p), InputError);
    p.blur_sigma = 0;
    p.noise_sigma = -1;
    EXPECT_THROW(degrade(hr, p), InputError);
    p.noise_sigma = 0;
    EXPECT_THROW(degrade(Image(30, 32, 3), p), InputError);
}

TEST(Degrade, DeterministicGivenSeed) {
    const auto hr = procedural_texture(6, 64);
    DegradationParams p;
    p.blur_sigma = 1.3;
    p.noise_sigma = 0.1;
    p.seed = 77;
    EXPECT_EQ(degrade(hr, p).lr, degrade(hr, p).lr);
    auto q = p;
    q.seed = 78;
    EXPECT_NE(degrade(hr, p).lr, degrade(hr, q).lr);
}

TEST(Degrade, LabelIsNormalisedSigmaClamped) {
    DegradationLimits lim;
    for (double b : {0.0, 0.7, 2.0, 3.99, 4.0, 9.0}) {
        for (double n : {0.0, 0.013, 0.1, 0.2, 0.5}) {
            DegradationParams p;
            p.blur_sigma = b;
            p.noise_sigma = n;
            const auto d = label_for(p, lim);
            EXPECT_DOUBLE_EQ(d.d_b, std::min(1.0, b / 4.0));
            EXPECT_DOUBLE_EQ(d.d_n, std::min(1.0, n / 0.2));
            if (b <= 4.0) {
                EXPECT_NEAR(d.d_b * lim.blur_sigma_max, b, 1e-12);
            }
        }
    }
}

TEST(Degrade, NoiseMonotonicity) {
    const auto hr = procedural_texture(7, 64);
    DegradationParams p;
    p.blur_sigma = 1.0;
    p.seed = 5;
    const auto clean = degrade(hr, p).lr;
    double prev = 0.0;
    for (double s : {0.01, 0.03, 0.06, 0.1, 0.15, 0.2}) {
        p.noise_sigma = s;
        const auto noisy = degrade(hr, p).lr;
        double mse = 0;
        for (std::size_t i = 0; i < noisy.size(); ++i) mse += std::pow(noisy.data[i] - clean.data[i], 2);
        EXPECT_GT(mse, prev) << "sigma " << s;
        prev = mse;
    }
}

TEST(Degrade, ValuesStayInRange) {
    const auto hr = procedural_texture(8, 64);
    DegradationParams p;
    p.blur_sigma = 0.4;
    p.noise_sigma = 0.2;
    p.seed = 9;
    for (float v : degrade(hr, p).lr.data) {
        EXPECT_GE(v, -1.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Upscale, ScaleOneIsExactCopy) {
    const auto img = dgsr::testing::random_image(9, 7, 1);
    EXPECT_EQ(upscale_lr(img, 1), img);
    EXPECT_THROW(upscale_lr(img, 0), InputError);
}

TEST(Upscale, ConstantStaysConstant) {
    Image img(8, 8, 3, 0.3f);
    const auto up = upscale_lr(img, 4);
    EXPECT_EQ(up.height, 32);
    for (float v : up.data) EXPECT_NEAR(v, 0.3f, 1e-6);
}

TEST(Upscale, MatchesReferenceBicubic) {
    const auto img = gradient_image(32, 32);
    const auto up = upscale_lr(img, 4);
    std::vector<double> src(img.data.begin(), img.data.end());
    const auto ref = ref_resize(src, 32, 32, 128, 128);
    ASSERT_EQ(up.size(), ref.size());
    double worst = 0;
    for (std::size_t i = 0; i < ref.size(); ++i) worst = std::max(worst, std::abs(up.data[i] - ref[i]));
    EXPECT_LT(worst, 1e-6);
}

TEST(Upscale, BandLimitedRoundTripAbove30dB) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto hr = gaussian_blur(procedural_texture(seed, 128), 4.0);
        const auto lr = resize_bicubic(hr, 32, 32);
        EXPECT_GE(metrics::psnr_y(upscale_lr(lr, 4), hr), 30.0) << "seed " << seed;
    }
}

TEST(Blur, ZeroSigmaIsIdentityAndBlurSmooths) {
    const auto img = procedural_texture(12, 32);
    EXPECT_EQ(gaussian_blur(img, 0.0), img);
    EXPECT_THROW(gaussian_blur(img, -1.0), InputError);
    EXPECT_LT(metrics::hf_energy(gaussian_blur(img, 1.5)), metrics::hf_energy(img));
}

TEST(Sampler, LabelMeansNearRangeMidpoints) {
    DatasetSpec spec;
    spec.count = 1000;
    spec.seed = 2024;
    double sn = 0, sb = 0;
    for (int i = 0; i < spec.count; ++i) {
        const auto p = sample_params(spec, i);
        const auto d = label_for(p, spec.limits);
        sn += d.d_n;
        sb += d.d_b;
        EXPECT_GE(p.blur_sigma, spec.ranges.blur_lo);
        EXPECT_LE(p.blur_sigma, spec.ranges.blur_hi);
    }
    const double mid_n = 0.5 * (spec.ranges.noise_lo + spec.ranges.noise_hi) / spec.limits.noise_sigma_max;
    const double mid_b = 0.5 * (spec.ranges.blur_lo + spec.ranges.blur_hi) / spec.limits.blur_sigma_max;
    EXPECT_NEAR(sn / spec.count, mid_n, 0.05);
    EXPECT_NEAR(sb / spec.count, mid_b, 0.05);
}

TEST(Sampler, ItemSeedsAreDistinct) {
    std::set<std::uint64_t> seen;
    for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(item_seed(42, i));
    EXPECT_EQ(seen.size(), 1000u);
    EXPECT_NE(item_seed(1, 0), item_seed(2, 0));
}

TEST(Texture, DeterministicAndInRange) {
    const auto a = procedural_texture(99, 64);
    EXPECT_EQ(a, procedural_texture(99, 64));
    EXPECT_NE(a, procedural_texture(100, 64));
    for (float v : a.data) {
        EXPECT_GE(v, -1.0f);
        EXPECT_LE(v, 1.0f);
    }
}

TEST(Dataset, ZeroCountIsInputError) {
    TempDir dir("ds0");
    DatasetSpec spec;
    spec.count = 0;
    EXPECT_THROW(make_dataset(spec, dir.path()), InputError);
    EXPECT_THROW(synthesize(spec), InputError);
}

TEST(Dataset, SameSeedGivesByteIdenticalFiles) {
    TempDir a("dsa"), b("dsb");
    DatasetSpec spec;
    spec.count = 3;
    spec.seed = 7;
    spec.hr_size = 32;
    make_dataset(spec, a.path());
    make_dataset(spec, b.path());
    for (const char* rel : {"manifest.txt", "hr/00000.png", "lr/00002.png"}) {
        EXPECT_EQ(slurp(a / rel), slurp(b / rel)) << rel;
    }
}

TEST(Dataset, LoadMatchesInMemorySynthesis) {
    TempDir dir("dsl");
    DatasetSpec spec;
    spec.count = 4;
    spec.seed = 8;
    spec.hr_size = 32;
    make_dataset(spec, dir.path());
    const auto loaded = load_dataset(dir.path());
    const auto mem = synthesize(spec);
    ASSERT_EQ(loaded.size(), mem.size());
    for (std::size_t i = 0; i < mem.size(); ++i) {
        EXPECT_EQ(loaded.items[i].hr, mem.items[i].hr);
        EXPECT_EQ(loaded.items[i].lr, mem.items[i].lr);
        EXPECT_EQ(loaded.items[i].label, mem.items[i].label);
        EXPECT_EQ(loaded.items[i].params.seed, mem.items[i].params.seed);
    }
    EXPECT_EQ(loaded.spec.ranges.blur_hi, spec.ranges.blur_hi);
}

TEST(Dataset, DirectorySource) {
    TempDir src("src"), out("dsd");
    png::write(src / "a.png", dgsr::testing::random_image(40, 50, 1));
    png::write(src / "b.png", dgsr::testing::random_image(36, 36, 2));
    DatasetSpec spec;
    spec.count = 3;
    spec.hr_size = 32;
    spec.source = src.path().string();
    const auto ds = make_dataset(spec, out.path());
    ASSERT_EQ(ds.size(), 3u);
    EXPECT_EQ(ds.items[0].hr.height, 32);
    EXPECT_EQ(ds.items[0].lr.width, 8);
}

TEST(Dataset, EmptySourceDirectoryIsInputError) {
    TempDir src("empty"), out("dse");
    DatasetSpec spec;
    spec.count = 2;
    spec.source = src.path().string();
    EXPECT_THROW(make_dataset(spec, out.path()), InputError);
}

TEST(Dataset, CorruptManifestIsLoadError) {
    TempDir dir("dsc");
    DatasetSpec spec;
    spec.count = 1;
    spec.hr_size = 32;
    make_dataset(spec, dir.path());
    std::ofstream(dir / "manifest.txt") << "pipeline_version=99\n";
    EXPECT_THROW(load_dataset(dir.path()), LoadError);
}
