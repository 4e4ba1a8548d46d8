#include "dgsr/base64.hpp"

#include <openssl/evp.h>

#include "dgsr/errors.hpp"

namespace dgsr::base64 {

std::string encode(const std::vector<std::uint8_t>& bytes) {
    std::string out(4 * ((bytes.size() + 2) / 3), '\0');
    const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                  static_cast<int>(bytes.size()));
    out.resize(static_cast<std::size_t>(n));
    return out;
}

std::vector<std::uint8_t> decode(std::string_view text) {
    std::string clean;
    clean.reserve(text.size());
    for (char c : text) {
        if (c == ' ' || c == '\n' || c == '\r' || c == '\t') continue;
        clean.push_back(c);
    }
    if (clean.size() % 4 != 0) throw InputError("base64 length is not a multiple of 4");
    std::size_t pad = 0;
    if (!clean.empty() && clean.back() == '=') ++pad;
    if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
    // EVP_DecodeBlock tolerates '=' in the body; we don't.
    if (clean.find('=') < clean.size() - pad) throw InputError("malformed base64 padding");
    std::vector<std::uint8_t> out(clean.size() / 4 * 3);
    const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                  static_cast<int>(clean.size()));
    if (n < 0) throw InputError("malformed base64");
    out.resize(static_cast<std::size_t>(n) - pad);
    return out;
}

} // namespace dgsr::base64
