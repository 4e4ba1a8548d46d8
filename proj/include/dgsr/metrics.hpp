#pragma once

#include <vector>

#include "dgsr/image.hpp"

namespace dgsr::metrics {

inline constexpr double kPsnrCap = 100.0;

// Luma plane (BT.601 full range, 0..255) of an image after 8-bit quantisation.
struct LumaPlane {
    int height = 0;
    int width = 0;
    std::vector<double> y;
};

LumaPlane luma(const Image& img);

double psnr_from_mse(double mse);
double psnr_y(const LumaPlane& a, const LumaPlane& b);
double psnr_y(const Image& a, const Image& b);

// Gaussian-windowed SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, L 255), mean
// over all fully-contained windows.
double ssim_y(const LumaPlane& a, const LumaPlane& b);
double ssim_y(const Image& a, const Image& b);

// Mean |4-neighbour Laplacian| of the luma plane, reflect-101 borders.
double hf_energy(const LumaPlane& a);
double hf_energy(const Image& a);

struct MetricReport {
    double psnr_y = 0.0;
    double ssim_y = 0.0;
    double hf_energy = 0.0;
};

MetricReport evaluate(const Image& pred, const Image& reference);

} // namespace dgsr::metrics
