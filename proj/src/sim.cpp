// SPDX-License-Identifier: Apache-2.0
#include "stackvisor/sim.hpp"

#include "stackvisor/ta_runtime.hpp"

namespace stackvisor {

Simulation::Simulation(const SimConfig& config)
    : machine(config.machine), hv(machine, config.hypervisor), os(hv, config.reserved_pages)
{
    hv.set_program_loader(ta::make_loader());
}

}  // namespace stackvisor
