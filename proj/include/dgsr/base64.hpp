#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace dgsr::base64 {

std::string encode(const std::vector<std::uint8_t>& bytes);

// Standard alphabet with padding; ASCII whitespace is ignored. Throws
// InputError on any other malformed input.
std::vector<std::uint8_t> decode(std::string_view text);

} // namespace dgsr::base64
