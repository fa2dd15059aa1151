#pragma once

#include <string>

#include "petnas/model.hpp"

namespace petnas {

// Named-tensor container: 4-byte magic "PNCK", a little-endian uint64 header
// length, a JSON header listing the model shape and tensor names/shapes/
// offsets, then the payload as little-endian 64-bit floats.
void save_checkpoint(const FrozenParams& params, const std::string& path);
FrozenParams load_checkpoint(const std::string& path);

}  // namespace petnas
