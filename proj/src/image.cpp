// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/image.hpp"

#include <algorithm>
#include <fstream>
#include <iterator>
#include <string>

#include "stackvisor/error.hpp"
#include "stackvisor/ta_runtime.hpp"

namespace stackvisor {

namespace {

template <typename T>
void put_le(Bytes& out, T v)
{
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
}

template <typename T>
T get_le(ByteView in, std::size_t off)
{
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        v = static_cast<T>(v | static_cast<T>(in[off + i]) << (8 * i));
    }
    return v;
}

}  // namespace

ImageMeta EnclaveImage::meta() const noexcept
{
    return ImageMeta{mem_size_pages, channel_size_pages, entry_cmd_table_len,
                     static_cast<std::uint32_t>(code_blob.size())};
}

Bytes EnclaveImage::serialize() const
{
    Bytes out(kImageMagic.begin(), kImageMagic.end());
    out.reserve(kImageHeaderSize + code_blob.size());
    put_le(out, version);
    put_le(out, mem_size_pages);
    put_le(out, channel_size_pages);
    put_le(out, entry_cmd_table_len);
    put_le(out, static_cast<std::uint32_t>(code_blob.size()));
    out.insert(out.end(), code_blob.begin(), code_blob.end());
    return out;
}

EnclaveImage EnclaveImage::parse(ByteView file)
{
    if (file.size() < kImageHeaderSize) {
        throw Error(Errc::BadImage, "file shorter than header");
    }
    if (!std::equal(kImageMagic.begin(), kImageMagic.end(), file.begin())) {
        throw Error(Errc::BadImage, "bad magic");
    }
    EnclaveImage img;
    img.version = get_le<std::uint16_t>(file, 4);
    img.mem_size_pages = get_le<std::uint32_t>(file, 6);
    img.channel_size_pages = get_le<std::uint32_t>(file, 10);
    img.entry_cmd_table_len = get_le<std::uint32_t>(file, 14);
    const auto code_len = get_le<std::uint32_t>(file, 18);
    if (img.version != kImageVersion) {
        throw Error(Errc::BadImage, "unsupported version " + std::to_string(img.version));
    }
    if (img.mem_size_pages == 0 || img.channel_size_pages == 0) {
        throw Error(Errc::BadImage, "memory and channel sizes must be at least one page");
    }
    if (file.size() != kImageHeaderSize + std::size_t{code_len}) {
        throw Error(Errc::BadImage, "length " + std::to_string(file.size()) + " != header + " +
                                        std::to_string(code_len));
    }
    if (code_len > std::size_t{img.mem_size_pages} * kPageSize) {
        throw Error(Errc::BadImage, "code blob larger than enclave memory");
    }
    img.code_blob.assign(file.begin() + kImageHeaderSize, file.end());
    return img;
}

EnclaveImage EnclaveImage::load(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw Error(Errc::BadImage, "cannot open " + path.string());
    }
    Bytes raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return parse(raw);
}

void EnclaveImage::save(const std::filesystem::path& path) const
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw Error(Errc::BadImage, "cannot write " + path.string());
    }
    auto raw = serialize();
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

EnclaveImage builtin_image(std::string_view program, std::uint32_t mem_pages,
                           std::uint32_t channel_pages, std::size_t code_len)
{
    EnclaveImage img;
    img.code_blob = ta::make_code_blob(program, std::max(code_len, ta::kProgramNameLen));
    img.channel_size_pages = channel_pages;
    img.mem_size_pages =
        std::max(mem_pages, ta::required_mem_pages(img.code_blob.size(), channel_pages));
    img.entry_cmd_table_len =
        static_cast<std::uint32_t>(ta::builtin_program(program).handlers.size());
    return img;
}

}  // namespace stackvisor
