// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "stackvisor/guest_os.hpp"
#include "stackvisor/hypervisor.hpp"
#include "stackvisor/machine.hpp"

namespace stackvisor {

struct SimConfig {
    MachineConfig machine{};
    HypervisorConfig hypervisor{};
    IpaPage reserved_pages = PrimaryOs::kDefaultReserved;
};

// One self-contained simulated system: machine, hypervisor with the built-in
// TA loader, and the primary OS.
class Simulation {
public:
    explicit Simulation(const SimConfig& config = {});

    Simulation(const Simulation&) = delete;
    Simulation& operator=(const Simulation&) = delete;

    PhysicalMachine machine;
    Hypervisor hv;
    PrimaryOs os;
};

}  // namespace stackvisor
