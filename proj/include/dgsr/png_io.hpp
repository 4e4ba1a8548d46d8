#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dgsr/image.hpp"

namespace dgsr::png {

// 8-bit RGB encode/decode. Decoding accepts gray, gray+alpha, RGB and RGBA
// (alpha dropped, 16-bit stripped) and always returns a 3-channel image.
std::vector<std::uint8_t> encode(const Image& img);
Image decode(const std::vector<std::uint8_t>& bytes);

Image read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const Image& img);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

} // namespace dgsr::png
