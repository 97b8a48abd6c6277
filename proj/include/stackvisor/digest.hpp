// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>

#include "stackvisor/machine.hpp"

namespace stackvisor::crypto {

using Digest = std::array<std::uint8_t, 32>;

Digest sha256(ByteView data);
Digest hmac_sha256(ByteView key, ByteView data);

/// Constant-time comparison of equal-length buffers.
bool equal_ct(ByteView a, ByteView b) noexcept;

}  // namespace stackvisor::crypto
