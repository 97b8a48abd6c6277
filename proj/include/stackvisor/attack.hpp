// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stackvisor/events.hpp"
#include "stackvisor/monitor.hpp"

namespace stackvisor {

struct AttackOutcome {
    std::string id;           // "a".."e"
    std::string name;
    std::uint64_t attempts = 0;
    std::uint64_t contained = 0;
    std::string detail;
    bool pass = false;
};

struct AttackConfig {
    std::size_t frames = 2048;
    std::uint32_t private_pages = 256;
    Bytes wallet_seed = Bytes{'c', 'o', 'r', 'r', 'e', 'c', 't', ' ', 'h', 'o', 'r', 's', 'e'};
};

struct AttackReport {
    std::vector<AttackOutcome> attacks;
    std::vector<Violation> violations;
    double seconds = 0.0;
    bool pass = false;

    Json to_json() const;
};

// The fixed adversary playbook against a compromised primary OS and a
// malicious TA:
//   a  primary reads and writes every donated private page while the enclave lives
//   b  primary inspects reclaimed pages after destroy
//   c  primary scans everything it maps for the wallet master key, after every
//      hypervisor event of a live wallet session
//   d  enclave issues CreateEnclave / InvokeEnclave / DestroyEnclave
//   e  enclave reads and writes IPAs outside its donation
AttackReport attack_suite(const AttackConfig& config = {});

}  // namespace stackvisor
