// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "stackvisor/channel.hpp"
#include "stackvisor/error.hpp"
#include "support/oracles.hpp"

namespace sv = stackvisor;

namespace {

struct ChannelRig {
    sv::PhysicalMachine machine{config()};
    sv::Hypervisor hv{machine};
    sv::VmPort port{hv, hv.primary()};

    static sv::MachineConfig config()
    {
        sv::MachineConfig c;
        c.frames = 16;
        return c;
    }
};

sv::Errc code_of(const std::function<void()>& fn)
{
    try {
        fn();
    } catch (const sv::Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an error";
    return sv::Errc::InvalidArgument;
}

}  // namespace

TEST(ChannelHeader, WireLayoutIsLittleEndian)
{
    sv::ChannelHeader h{sv::ChannelStatus::Done, 0x01020304, 5, 0xA0B0C0D0};
    const auto raw = h.encode();
    const sv::Bytes expect = oracle::cat({oracle::str("BECH"), oracle::u32le(2), oracle::u32le(0x01020304),
                                          oracle::u32le(5), oracle::u32le(0xA0B0C0D0)});
    EXPECT_EQ(sv::Bytes(raw.begin(), raw.end()), expect);
    EXPECT_EQ(sv::ChannelHeader::decode(raw), h);
}

TEST(ChannelHeader, DecodeRejectsGarbage)
{
    auto raw = sv::ChannelHeader{}.encode();
    EXPECT_FALSE(sv::ChannelHeader::decode(sv::ByteView(raw).first(19)));
    auto bad_magic = raw;
    bad_magic[0] = 'X';
    EXPECT_FALSE(sv::ChannelHeader::decode(bad_magic));
    auto bad_status = raw;
    bad_status[4] = 9;
    EXPECT_FALSE(sv::ChannelHeader::decode(bad_status));
}

TEST(ChannelHeader, TransitionTable)
{
    using S = sv::ChannelStatus;
    const S all[] = {S::Idle, S::Request, S::Done, S::Error, S::Preempted};
    int allowed = 0;
    for (S from : all) {
        for (S to : all) {
            allowed += sv::channel_transition_allowed(from, to) ? 1 : 0;
        }
    }
    EXPECT_EQ(allowed, 8);
    EXPECT_TRUE(sv::channel_transition_allowed(S::Idle, S::Request));
    EXPECT_TRUE(sv::channel_transition_allowed(S::Request, S::Preempted));
    EXPECT_TRUE(sv::channel_transition_allowed(S::Preempted, S::Done));
    EXPECT_FALSE(sv::channel_transition_allowed(S::Preempted, S::Request));
    EXPECT_FALSE(sv::channel_transition_allowed(S::Done, S::Done));
}

TEST(Channel, RequestServeCompleteRoundTrip)
{
    ChannelRig r;
    auto app = sv::Channel::contiguous(r.port, 4 * 4096, 2 * 4096);
    auto ta = sv::Channel::contiguous(r.port, 4 * 4096, 2 * 4096);
    app.init();
    EXPECT_EQ(app.header().status, sv::ChannelStatus::Idle);

    sv::Bytes args(5000);  // crosses into the second page
    for (std::size_t i = 0; i < args.size(); ++i) {
        args[i] = static_cast<std::uint8_t>(i * 7);
    }
    app.write_request(9, args);
    EXPECT_EQ(code_of([&] { app.write_request(1, {}); }), sv::Errc::Busy);

    auto req = ta.serve();
    EXPECT_EQ(req.cmd_id, 9u);
    EXPECT_EQ(req.args, args);
    ta.complete(sv::ChannelStatus::Done, oracle::str("result"));
    auto [status, payload] = app.read_response();
    EXPECT_EQ(status, sv::ChannelStatus::Done);
    EXPECT_EQ(payload, oracle::str("result"));
    EXPECT_EQ(code_of([&] { ta.serve(); }), sv::Errc::NoRequest);

    // Raw bytes agree with the documented layout.
    EXPECT_EQ(r.machine.read_frame(4, 0, 4), oracle::str("BECH"));
    EXPECT_EQ(r.machine.read_frame(4, 16, 4), oracle::u32le(6));
}

TEST(Channel, SizeLimits)
{
    ChannelRig r;
    auto ch = sv::Channel::contiguous(r.port, 3 * 4096, 4096);
    ch.init();
    EXPECT_EQ(ch.payload_capacity(), 4096u - 20);
    EXPECT_EQ(code_of([&] { ch.write_request(1, sv::Bytes(4077)); }), sv::Errc::TooLarge);
    ch.write_request(1, sv::Bytes(4076));
    EXPECT_EQ(code_of([&] { ch.complete(sv::ChannelStatus::Done, sv::Bytes(5000)); }), sv::Errc::TooLarge);
    // A hostile arg_len larger than the region is refused by the server.
    auto hdr = ch.header();
    hdr.arg_len = 9000;
    const auto raw = hdr.encode();
    r.machine.write_frame(3, 0, raw);
    EXPECT_EQ(code_of([&] { ch.serve(); }), sv::Errc::TooLarge);
}

TEST(Channel, NonContiguousPages)
{
    ChannelRig r;
    sv::Channel ch(r.port, {9 * 4096, 2 * 4096});
    ch.init();
    ch.write_request(3, sv::Bytes(4100, 0xEE));
    // Payload bytes 4076.. live at the start of the second listed page.
    EXPECT_EQ(r.machine.read_frame(2, 0, 24), sv::Bytes(24, 0xEE));
    EXPECT_EQ(ch.serve().args, sv::Bytes(4100, 0xEE));
}

TEST(Channel, StatusWritesAreTraced)
{
    struct Rec : sv::Observer {
        std::vector<sv::Json> details;
        void on_event(const sv::TraceEvent& ev) override
        {
            if (ev.kind == sv::EventKind::Channel) {
                details.push_back(ev.detail);
            }
        }
    } rec;
    ChannelRig r;
    r.hv.add_observer(&rec);
    auto ch = sv::Channel::contiguous(r.port, 3 * 4096, 4096);
    ch.init();
    ch.write_request(1, oracle::str("ab"));
    ch.complete(sv::ChannelStatus::Error, {});
    r.hv.remove_observer(&rec);
    ASSERT_EQ(rec.details.size(), 3u);
    EXPECT_TRUE(rec.details[0]["from"].is_null());
    EXPECT_EQ(rec.details[1]["from"], "Idle");
    EXPECT_EQ(rec.details[1]["to"], "Request");
    EXPECT_EQ(rec.details[2]["to"], "Error");
    EXPECT_EQ(rec.details[2]["side"], "primary");
}
