#pragma once

#include <optional>
#include <string>

#include "relmap/network.hpp"
#include "relmap/optimizer.hpp"
#include "relmap/rng.hpp"

namespace relmap {

// Single-file binary checkpoint: architecture, weights, bit-packed
// binarized masks per completed task, raw maps of the in-progress task,
// BN buffers, frozen indicators, optimizer state and RNG state.
// Versioned header; round-trips bit-exactly.

struct Checkpoint {
  std::string config_hash;
  MaskedNetwork net;
  std::optional<Adam> adam;
  std::string rng_state;  // empty when absent; feed to Rng::restore
};

void save_checkpoint(const std::string& path, const MaskedNetwork& net,
                     const Adam* adam, const Rng* rng,
                     const std::string& config_hash);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace relmap
