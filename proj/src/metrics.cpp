#include "dgsr/metrics.hpp"

#include <cmath>

namespace dgsr::metrics {

namespace {

constexpr int kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = (0.01 * 255.0) * (0.01 * 255.0);
constexpr double kC2 = (0.03 * 255.0) * (0.03 * 255.0);

void require_same(const LumaPlane& a, const LumaPlane& b) {
    if (a.height != b.height || a.width != b.width) throw InputError("metric inputs differ in size");
}

int reflect101(int i, int n) {
    if (n == 1) return 0;
    if (i < 0) return -i;
    if (i >= n) return 2 * (n - 1) - i;
    return i;
}

// Valid-mode separable filtering of a plane with a 1-D kernel.
std::vector<double> filter_valid(const std::vector<double>& src, int h, int w, const std::vector<double>& k) {
    const int n = static_cast<int>(k.size());
    const int ow = w - n + 1, oh = h - n + 1;
    std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[i] * src[static_cast<std::size_t>(y) * w + x + i];
            tmp[static_cast<std::size_t>(y) * ow + x] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
            double s = 0.0;
            for (int i = 0; i < n; ++i) s += k[i] * tmp[static_cast<std::size_t>(y + i) * ow + x];
            out[static_cast<std::size_t>(y) * ow + x] = s;
        }
    return out;
}

} // namespace

LumaPlane luma(const Image& img) {
    if (img.channels != 3) throw InputError("luma requires an RGB image");
    LumaPlane p{img.height, img.width, std::vector<double>(static_cast<std::size_t>(img.height) * img.width)};
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            p.y[static_cast<std::size_t>(y) * img.width + x] = 0.299 * quantize(img.at(y, x, 0)) +
                                                               0.587 * quantize(img.at(y, x, 1)) +
                                                               0.114 * quantize(img.at(y, x, 2));
        }
    return p;
}

double psnr_from_mse(double mse) {
    if (mse <= 0.0) return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / mse));
}

double psnr_y(const LumaPlane& a, const LumaPlane& b) {
    require_same(a, b);
    double s = 0.0;
    for (std::size_t i = 0; i < a.y.size(); ++i) {
        const double d = a.y[i] - b.y[i];
        s += d * d;
    }
    return psnr_from_mse(s / static_cast<double>(a.y.size()));
}

double psnr_y(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw InputError("psnr_y: image shapes differ");
    return psnr_y(luma(a), luma(b));
}

double ssim_y(const LumaPlane& a, const LumaPlane& b) {
    require_same(a, b);
    if (a.height < kWindow || a.width < kWindow) throw InputError("ssim_y: image smaller than the 11x11 window");
    std::vector<double> k(kWindow);
    double total = 0.0;
    for (int i = 0; i < kWindow; ++i) {
        const double d = i - kWindow / 2;
        k[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
        total += k[i];
    }
    for (auto& v : k) v /= total;

    const std::size_t n = a.y.size();
    std::vector<double> aa(n), bb(n), ab(n);
    for (std::size_t i = 0; i < n; ++i) {
        aa[i] = a.y[i] * a.y[i];
        bb[i] = b.y[i] * b.y[i];
        ab[i] = a.y[i] * b.y[i];
    }
    const int h = a.height, w = a.width;
    const auto mu_a = filter_valid(a.y, h, w, k);
    const auto mu_b = filter_valid(b.y, h, w, k);
    const auto s_aa = filter_valid(aa, h, w, k);
    const auto s_bb = filter_valid(bb, h, w, k);
    const auto s_ab = filter_valid(ab, h, w, k);
    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = s_aa[i] - ma * ma, vb = s_bb[i] - mb * mb, cov = s_ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + kC1) * (2.0 * cov + kC2)) / ((ma * ma + mb * mb + kC1) * (va + vb + kC2));
    }
    return acc / static_cast<double>(mu_a.size());
}

double ssim_y(const Image& a, const Image& b) {
    if (!a.same_shape(b)) throw InputError("ssim_y: image shapes differ");
    return ssim_y(luma(a), luma(b));
}

double hf_energy(const LumaPlane& p) {
    if (p.y.empty()) return 0.0;
    const int h = p.height, w = p.width;
    auto at = [&](int y, int x) { return p.y[static_cast<std::size_t>(reflect101(y, h)) * w + reflect101(x, w)]; };
    double s = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            s += std::abs(at(y - 1, x) + at(y + 1, x) + at(y, x - 1) + at(y, x + 1) - 4.0 * at(y, x));
        }
    return s / static_cast<double>(p.y.size());
}

double hf_energy(const Image& a) {
    return hf_energy(luma(a));
}

MetricReport evaluate(const Image& pred, const Image& reference) {
    if (!pred.same_shape(reference)) throw InputError("evaluate: image shapes differ");
    const auto a = luma(pred), b = luma(reference);
    return {psnr_y(a, b), ssim_y(a, b), hf_energy(a)};
}

} // namespace dgsr::metrics
