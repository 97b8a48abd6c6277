// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "stackvisor/digest.hpp"
#include "stackvisor/image.hpp"
#include "stackvisor/sim.hpp"
#include "stackvisor/wallet.hpp"
#include "support/oracles.hpp"

namespace sv = stackvisor;
namespace w = stackvisor::wallet;

namespace {

using oracle::Bytes;

Bytes digest_bytes(const sv::crypto::Digest& d) { return Bytes(d.begin(), d.end()); }

}  // namespace

TEST(Crypto, Sha256KnownAnswers)
{
    EXPECT_EQ(oracle::to_hex(oracle::sha256(oracle::str("abc"))),
              "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(oracle::to_hex(oracle::sha256({})),
              "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Crypto, HmacRfc4231Vectors)
{
    struct Case {
        Bytes key;
        Bytes msg;
        const char* mac;
    };
    const Case cases[] = {
        {Bytes(20, 0x0b), oracle::str("Hi There"),
         "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"},
        {oracle::str("Jefe"), oracle::str("what do ya want for nothing?"),
         "5bdcc146bf60754e6a042426089575c75a003f089d2739839dec58b964ec3843"},
        {Bytes(131, 0xaa), oracle::str("Test Using Larger Than Block-Size Key - Hash Key First"),
         "60e431591ee0b67f0d8a26aacbf5b77f8e0bc6213728c5140546040f0ee37f54"},
    };
    for (const auto& c : cases) {
        EXPECT_EQ(oracle::to_hex(digest_bytes(sv::crypto::hmac_sha256(c.key, c.msg))), c.mac);
        EXPECT_EQ(oracle::to_hex(oracle::hmac(c.key, c.msg)), c.mac);
    }
}

TEST(Crypto, ConstantTimeEqual)
{
    EXPECT_TRUE(sv::crypto::equal_ct(oracle::str("abc"), oracle::str("abc")));
    EXPECT_FALSE(sv::crypto::equal_ct(oracle::str("abc"), oracle::str("abd")));
    EXPECT_FALSE(sv::crypto::equal_ct(oracle::str("abc"), oracle::str("ab")));
}

TEST(Wallet, HostChainMatchesOracle)
{
    std::mt19937_64 rng(11);
    for (int i = 0; i < 20; ++i) {
        Bytes seed(1 + rng() % 40);
        for (auto& b : seed) {
            b = static_cast<std::uint8_t>(rng());
        }
        const auto master = oracle::WalletOracle::master(seed);
        ASSERT_EQ(digest_bytes(w::master_from_seed(seed)), master);
        const auto idx = static_cast<std::uint32_t>(rng() % 64);
        const auto child = oracle::WalletOracle::child(master, idx);
        w::Key m{};
        std::copy(master.begin(), master.end(), m.begin());
        const auto c = w::derive_child(m, idx);
        ASSERT_EQ(digest_bytes(c), child);
        ASSERT_EQ(digest_bytes(w::pubkey(c)), oracle::WalletOracle::pub(child));
        const auto a = w::address(c);
        ASSERT_EQ(Bytes(a.begin(), a.end()), oracle::WalletOracle::address(child));
        const auto t = w::sign(c, seed);
        ASSERT_EQ(Bytes(t.begin(), t.end()), oracle::WalletOracle::tag(child, seed));
    }
}

TEST(Wallet, EnclaveSessionMatchesOracleByteForByte)
{
    sv::SimConfig config;
    config.machine.frames = 256;
    sv::Simulation sim(config);
    const int fd = sim.os.driver_create(sv::builtin_image("wallet"));
    const Bytes seed = oracle::str("correct horse battery staple");
    const Bytes msg = oracle::str("pay 5 to bob");

    auto call = [&](std::uint32_t cmd, const Bytes& args) {
        auto r = sim.os.driver_invoke(fd, cmd, args);
        EXPECT_EQ(r.status, sv::ChannelStatus::Done) << "command " << cmd;
        return r.payload;
    };
    EXPECT_TRUE(call(w::kCreateMasterKey, seed).empty());
    const auto master = oracle::WalletOracle::master(seed);
    for (std::uint32_t i = 0; i < 3; ++i) {
        EXPECT_EQ(call(w::kDeriveKey, {}), oracle::u32le(i));
    }
    for (std::uint32_t i = 0; i < 3; ++i) {
        const auto child = oracle::WalletOracle::child(master, i);
        EXPECT_EQ(call(w::kGetAddress, oracle::u32le(i)), oracle::WalletOracle::address(child));
        EXPECT_EQ(call(w::kGetPubkey, oracle::u32le(i)), oracle::WalletOracle::pub(child));
        const auto tag = call(w::kSign, oracle::cat({oracle::u32le(i), msg}));
        EXPECT_EQ(tag, oracle::WalletOracle::tag(child, msg));
        EXPECT_EQ(call(w::kVerify, oracle::cat({oracle::u32le(i), tag, msg})), Bytes{1});
        auto bad = tag;
        bad[17] ^= 0x01;
        EXPECT_EQ(call(w::kVerify, oracle::cat({oracle::u32le(i), bad, msg})), Bytes{0});
        EXPECT_EQ(call(w::kVerify, oracle::cat({oracle::u32le(i), tag, oracle::str("pay 500 to bob")})), Bytes{0});
    }
}

TEST(Wallet, ErrorsAreErrorResponses)
{
    sv::SimConfig config;
    config.machine.frames = 256;
    sv::Simulation sim(config);
    const int fd = sim.os.driver_create(sv::builtin_image("wallet"));
    auto status = [&](std::uint32_t cmd, const Bytes& args) { return sim.os.driver_invoke(fd, cmd, args).status; };
    EXPECT_EQ(status(w::kDeriveKey, {}), sv::ChannelStatus::Error);  // no master yet
    EXPECT_EQ(status(w::kGetAddress, oracle::u32le(0)), sv::ChannelStatus::Error);
    EXPECT_EQ(status(w::kCreateMasterKey, {}), sv::ChannelStatus::Error);  // empty seed
    EXPECT_EQ(status(w::kCreateMasterKey, oracle::str("s")), sv::ChannelStatus::Done);
    EXPECT_EQ(status(w::kGetPubkey, oracle::u32le(0)), sv::ChannelStatus::Error);  // not derived
    EXPECT_EQ(status(w::kDeriveKey, {}), sv::ChannelStatus::Done);
    EXPECT_EQ(status(w::kGetPubkey, oracle::u32le(0)), sv::ChannelStatus::Done);
    EXPECT_EQ(status(w::kGetPubkey, {1, 0}), sv::ChannelStatus::Error);  // short key id
    EXPECT_EQ(status(w::kVerify, oracle::u32le(0)), sv::ChannelStatus::Error);  // no tag
    EXPECT_EQ(status(99, {}), sv::ChannelStatus::Error);
}
