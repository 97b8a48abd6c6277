// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>

#include "stackvisor/hypervisor.hpp"
#include "stackvisor/machine.hpp"

namespace stackvisor {

// On-disk enclave package, little-endian:
//   0  magic               "BEIM"
//   4  version             u16
//   6  mem_size_pages      u32
//  10  channel_size_pages  u32
//  14  entry_cmd_table_len u32
//  18  code_blob_len       u32
//  22  code_blob
inline constexpr std::array<std::uint8_t, 4> kImageMagic{'B', 'E', 'I', 'M'};
inline constexpr std::uint16_t kImageVersion = 1;
inline constexpr std::size_t kImageHeaderSize = 22;

struct EnclaveImage {
    std::uint16_t version = kImageVersion;
    std::uint32_t mem_size_pages = 1;
    std::uint32_t channel_size_pages = 1;
    std::uint32_t entry_cmd_table_len = 0;
    Bytes code_blob;

    ImageMeta meta() const noexcept;
    std::size_t total_pages() const noexcept
    {
        return std::size_t{mem_size_pages} + channel_size_pages;
    }

    Bytes serialize() const;
    /// Throws Error(BadImage) on any malformed field or length mismatch.
    static EnclaveImage parse(ByteView file);

    static EnclaveImage load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    friend bool operator==(const EnclaveImage&, const EnclaveImage&) = default;
};

/// Image for one of the built-in TA programs, sized to fit its runtime layout
/// (at least `mem_pages` private pages).
EnclaveImage builtin_image(std::string_view program, std::uint32_t mem_pages = 0,
                           std::uint32_t channel_pages = 1, std::size_t code_len = 0);

}  // namespace stackvisor
