// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/digest.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <stdexcept>

namespace stackvisor::crypto {

Digest sha256(ByteView data)
{
    Digest out{};
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), out.data(), &len, EVP_sha256(), nullptr) != 1 ||
        len != out.size()) {
        throw std::runtime_error("EVP_Digest failed");
    }
    return out;
}

Digest hmac_sha256(ByteView key, ByteView data)
{
    Digest out{};
    unsigned int len = 0;
    if (HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(),
             out.data(), &len) == nullptr ||
        len != out.size()) {
        throw std::runtime_error("HMAC failed");
    }
    return out;
}

bool equal_ct(ByteView a, ByteView b) noexcept
{
    if (a.size() != b.size()) {
        return false;
    }
    std::uint8_t acc = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc |= static_cast<std::uint8_t>(a[i] ^ b[i]);
    }
    return acc == 0;
}

}  // namespace stackvisor::crypto
