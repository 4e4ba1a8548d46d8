#include "dgsr/png_io.hpp"

#include <png.h>

#include <cstring>
#include <fstream>
#include <iterator>

namespace dgsr::png {

std::vector<std::uint8_t> encode(const Image& img) {
    if (img.channels != 3) throw InputError("png encode: expected 3 channels");
    if (img.height <= 0 || img.width <= 0) throw InputError("png encode: empty image");
    std::vector<std::uint8_t> pixels(img.size());
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = quantize(img.data[i]);

    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width);
    image.height = static_cast<png_uint_32>(img.height);
    image.format = PNG_FORMAT_RGB;

    png_alloc_size_t size = 0;
    if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr)) {
        throw InputError(std::string("png encode failed: ") + image.message);
    }
    std::vector<std::uint8_t> out(size);
    if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr)) {
        throw InputError(std::string("png encode failed: ") + image.message);
    }
    out.resize(size);
    return out;
}

Image decode(const std::vector<std::uint8_t>& bytes) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
        throw InputError(std::string("png decode failed: ") + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    std::vector<std::uint8_t> pixels(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, pixels.data(), 0, nullptr)) {
        png_image_free(&image);
        throw InputError(std::string("png decode failed: ") + image.message);
    }
    Image img(static_cast<int>(image.height), static_cast<int>(image.width), 3);
    for (std::size_t i = 0; i < pixels.size(); ++i) img.data[i] = dequantize(pixels[i]);
    return img;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("short write to " + path.string());
}

Image read(const std::filesystem::path& path) {
    try {
        return decode(read_file(path));
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

void write(const std::filesystem::path& path, const Image& img) {
    write_file(path, encode(img));
}

} // namespace dgsr::png
