// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/wallet.hpp"

#include <algorithm>
#include <string_view>

#include "stackvisor/ta_runtime.hpp"

namespace stackvisor::wallet {

namespace {

constexpr std::string_view kMasterLabel = "stackvisor-wallet-master";

Bytes concat(std::string_view label, ByteView data)
{
    Bytes out(label.begin(), label.end());
    out.insert(out.end(), data.begin(), data.end());
    return out;
}

ByteView as_bytes(std::string_view s)
{
    return ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}


}  // namespace

Key master_from_seed(ByteView seed)
{
    Key k = crypto::hmac_sha256(as_bytes(kMasterLabel), seed);
    for (std::uint32_t i = 1; i < kMasterRounds; ++i) {
        k = crypto::hmac_sha256(k, seed);
    }
    // An all-zero master would read as "no key"; re-key (probability 2^-256).
    while (std::all_of(k.begin(), k.end(), [](auto b) { return b == 0; })) {
        k = crypto::hmac_sha256(k, seed);
    }
    return k;
}

Key derive_child(const Key& master, std::uint32_t index)
{
    return crypto::hmac_sha256(master, concat("derive", key_id_arg(index)));
}

Key pubkey(const Key& child)
{
    return crypto::hmac_sha256(child, as_bytes("pubkey"));
}

std::array<std::uint8_t, kAddressLen> address(const Key& child)
{
    auto pub = pubkey(child);
    auto d = crypto::sha256(crypto::sha256(pub));
    std::array<std::uint8_t, kAddressLen> out{};
    std::copy_n(d.begin(), kAddressLen, out.begin());
    return out;
}

std::array<std::uint8_t, kTagLen> sign(const Key& child, ByteView msg)
{
    auto lo = crypto::hmac_sha256(child, concat("sig0", msg));
    auto hi = crypto::hmac_sha256(child, concat("sig1", msg));
    std::array<std::uint8_t, kTagLen> out{};
    std::copy(lo.begin(), lo.end(), out.begin());
    std::copy(hi.begin(), hi.end(), out.begin() + kKeyLen);
    return out;
}

Bytes key_id_arg(std::uint32_t key_id)
{
    return Bytes{static_cast<std::uint8_t>(key_id), static_cast<std::uint8_t>(key_id >> 8),
                 static_cast<std::uint8_t>(key_id >> 16), static_cast<std::uint8_t>(key_id >> 24)};
}

Bytes sign_args(std::uint32_t key_id, ByteView msg)
{
    Bytes out = key_id_arg(key_id);
    out.insert(out.end(), msg.begin(), msg.end());
    return out;
}

Bytes verify_args(std::uint32_t key_id, ByteView tag, ByteView msg)
{
    Bytes out = key_id_arg(key_id);
    out.insert(out.end(), tag.begin(), tag.end());
    out.insert(out.end(), msg.begin(), msg.end());
    return out;
}

}  // namespace stackvisor::wallet

namespace stackvisor::ta {

namespace {

using wallet::Key;

Key load_key(TaEnv& env, std::size_t offset)
{
    auto raw = env.load(offset, wallet::kKeyLen);
    Key k{};
    std::copy(raw.begin(), raw.end(), k.begin());
    return k;
}

void require_master(TaEnv& env)
{
    if (env.load_u32(wallet::kStateMagicOff) != wallet::kStateMagic) {
        throw TaFailure("NoMasterKey");
    }
}

Key child_key(TaEnv& env, ByteView args)
{
    require_master(env);
    if (args.size() < 4) {
        throw TaFailure("missing key id");
    }
    std::uint32_t id = std::uint32_t{args[0]} | std::uint32_t{args[1]} << 8 |
                       std::uint32_t{args[2]} << 16 | std::uint32_t{args[3]} << 24;
    if (id >= env.load_u32(wallet::kStateCountOff)) {
        throw TaFailure("BadKeyId");
    }
    return load_key(env, wallet::kStateKeysOff + std::size_t{id} * wallet::kKeyLen);
}

}  // namespace

TaProgram wallet_program()
{
    using namespace wallet;
    TaProgram p{"wallet", {}, kDefaultWorkSteps};

    p.handlers[kCreateMasterKey] = [](TaEnv& env, ByteView seed) -> Bytes {
        if (seed.empty()) {
            throw TaFailure("empty seed");
        }
        const Key master = master_from_seed(seed);
        env.store(kStateMasterOff, master);
        env.store_u32(kStateCountOff, 0);
        env.store_u32(kStateMagicOff, kStateMagic);
        return {};
    };
    p.handlers[kDeriveKey] = [](TaEnv& env, ByteView) -> Bytes {
        require_master(env);
        const std::uint32_t index = env.load_u32(kStateCountOff);
        if (index >= kMaxDerivedKeys) {
            throw TaFailure("key slots exhausted");
        }
        const Key child = derive_child(load_key(env, kStateMasterOff), index);
        env.store(kStateKeysOff + std::size_t{index} * kKeyLen, child);
        env.store_u32(kStateCountOff, index + 1);
        return key_id_arg(index);
    };
    p.handlers[kGetAddress] = [](TaEnv& env, ByteView args) -> Bytes {
        auto a = address(child_key(env, args));
        return Bytes(a.begin(), a.end());
    };
    p.handlers[kGetPubkey] = [](TaEnv& env, ByteView args) -> Bytes {
        auto k = pubkey(child_key(env, args));
        return Bytes(k.begin(), k.end());
    };
    p.handlers[kSign] = [](TaEnv& env, ByteView args) -> Bytes {
        const Key child = child_key(env, args);
        auto tag = sign(child, args.subspan(4));
        return Bytes(tag.begin(), tag.end());
    };
    p.handlers[kVerify] = [](TaEnv& env, ByteView args) -> Bytes {
        const Key child = child_key(env, args);
        if (args.size() < 4 + kTagLen) {
            throw TaFailure("missing tag");
        }
        auto expected = sign(child, args.subspan(4 + kTagLen));
        return Bytes{static_cast<std::uint8_t>(crypto::equal_ct(expected, args.subspan(4, kTagLen)))};
    };
    return p;
}

}  // namespace stackvisor::ta
