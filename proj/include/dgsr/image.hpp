#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dgsr/errors.hpp"
#include "dgsr/nn/tensor.hpp"

namespace dgsr {

// H x W x C raster with values in [-1, 1], interleaved (HWC) storage.
struct Image {
    int height = 0;
    int width = 0;
    int channels = 3;
    std::vector<float> data;

    Image() = default;
    Image(int h, int w, int c = 3, float fill = 0.0f)
        : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {
        if (h < 0 || w < 0 || c <= 0) throw InputError("image dimensions must be non-negative");
    }

    bool empty() const { return data.empty(); }
    std::size_t size() const { return data.size(); }
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width + x) * channels + c;
    }
    float& at(int y, int x, int c) { return data[index(y, x, c)]; }
    float at(int y, int x, int c) const { return data[index(y, x, c)]; }

    bool same_shape(const Image& o) const {
        return height == o.height && width == o.width && channels == o.channels;
    }
    bool operator==(const Image& o) const { return same_shape(o) && data == o.data; }
};

inline void clamp_unit(Image& img) {
    for (auto& v : img.data) v = std::clamp(v, -1.0f, 1.0f);
}

// [-1,1] -> [0,255], rounding half away from zero.
inline std::uint8_t quantize(double v) {
    const double s = (std::clamp(v, -1.0, 1.0) + 1.0) * 0.5 * 255.0;
    return static_cast<std::uint8_t>(std::clamp(std::round(s), 0.0, 255.0));
}

inline float dequantize(std::uint8_t p) {
    return static_cast<float>(p / 255.0 * 2.0 - 1.0);
}

// Snap an image onto the 8-bit grid it would occupy after a PNG round trip.
inline Image quantized(const Image& img) {
    Image out = img;
    for (auto& v : out.data) v = dequantize(quantize(v));
    return out;
}

template <typename T>
nn::Tensor<T> to_chw(const Image& img) {
    nn::Tensor<T> t({img.channels, img.height, img.width});
    const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c)
                t.data[c * hw + static_cast<std::size_t>(y) * img.width + x] = static_cast<T>(img.at(y, x, c));
    return t;
}

template <typename T>
Image from_chw(const nn::Tensor<T>& t, bool clamp = true) {
    if (t.rank() != 3) throw InputError("from_chw: expected a [C,H,W] tensor");
    Image img(t.dim(1), t.dim(2), t.dim(0));
    const std::size_t hw = static_cast<std::size_t>(img.height) * img.width;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                float v = static_cast<float>(t.data[c * hw + static_cast<std::size_t>(y) * img.width + x]);
                img.at(y, x, c) = clamp ? std::clamp(v, -1.0f, 1.0f) : v;
            }
    return img;
}

} // namespace dgsr
