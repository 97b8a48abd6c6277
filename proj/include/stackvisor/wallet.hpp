// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "stackvisor/digest.hpp"
#include "stackvisor/machine.hpp"

namespace stackvisor::wallet {

enum Command : std::uint32_t {
    kCreateMasterKey = 1,
    kDeriveKey = 2,
    kGetAddress = 3,
    kGetPubkey = 4,
    kSign = 5,
    kVerify = 6,
};

inline constexpr std::size_t kKeyLen = 32;
inline constexpr std::size_t kAddressLen = 20;
inline constexpr std::size_t kTagLen = 64;
inline constexpr std::uint32_t kMasterRounds = 64;
inline constexpr std::uint32_t kMaxDerivedKeys = 64;

// State page layout.
inline constexpr std::size_t kStateMagicOff = 0;
inline constexpr std::size_t kStateCountOff = 4;
inline constexpr std::size_t kStateMasterOff = 8;
inline constexpr std::size_t kStateKeysOff = kStateMasterOff + kKeyLen;
inline constexpr std::uint32_t kStateMagic = 0x31544c57;  // "WLT1"

using Key = crypto::Digest;

// Keyed-hash chain shared by the TA and host tools.
Key master_from_seed(ByteView seed);
Key derive_child(const Key& master, std::uint32_t index);
Key pubkey(const Key& child);
std::array<std::uint8_t, kAddressLen> address(const Key& child);
std::array<std::uint8_t, kTagLen> sign(const Key& child, ByteView msg);

// Argument encoders for the application side.
Bytes key_id_arg(std::uint32_t key_id);
Bytes sign_args(std::uint32_t key_id, ByteView msg);
Bytes verify_args(std::uint32_t key_id, ByteView tag, ByteView msg);

}  // namespace stackvisor::wallet
