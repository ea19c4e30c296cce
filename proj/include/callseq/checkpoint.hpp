#pragma once

#include <string>

#include "callseq/model.hpp"

namespace callseq {

// Binary container: magic, format version, config as JSON, then every tensor
// as name + shape + little-endian 64-bit floats. save -> load -> forward is
// bitwise stable on the same platform.
void save_checkpoint(const std::string& path, const ModelParams& params);
ModelParams load_checkpoint(const std::string& path);

}  // namespace callseq
