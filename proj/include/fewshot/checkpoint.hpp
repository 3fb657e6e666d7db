#pragma once

// Checkpoint file: a text manifest of named parameter sections with their
// lengths, followed by the flat little-endian float32 arrays in manifest
// order. Round-trips losslessly.

#include <string>

#include "fewshot/network.hpp"

namespace fewshot {

void save_checkpoint(const NetworkParams<float>& params,
                     const std::string& path);
NetworkParams<float> load_checkpoint(const std::string& path);

}  // namespace fewshot
