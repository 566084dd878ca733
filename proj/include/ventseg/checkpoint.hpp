#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "ventseg/nets.hpp"
#include "ventseg/optim.hpp"

namespace ventseg {

struct Checkpoint {
    NetworkSpec spec;
    std::int64_t iteration = 0;
    double validation_dice = 0;
    std::string rng_state;
    ParameterStore params;
    std::optional<Adam> optimizer;
};

// Binary container: "VSCK" magic, a length-prefixed JSON header (spec,
// iteration, parameter names and shapes, scalar width) and the raw parameter,
// buffer and optimizer-moment payloads. Round trips are bit-exact.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Network of the checkpoint's spec carrying its parameters.
Network restore_network(const Checkpoint& ck);
Checkpoint make_checkpoint(const Network& net, std::int64_t iteration = 0, double validation_dice = 0);

}  // namespace ventseg
