#pragma once

#include <string>

#include "screx/model.hpp"

namespace screx {

// Model files carry a text header (magic, precision, input shape, layer
// list) followed by a raw little-endian weight blob in the declared
// precision.  Round-trips are bit-exact.  Layout documented in README.md.
void save_model(const ModelGraph& m, const std::string& path);
ModelGraph load_model(const std::string& path);

}  // namespace screx
