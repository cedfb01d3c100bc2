#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "screx/model.hpp"

namespace screx {

// Random fully connected net: dims = {in, h1, ..., out}, relu after every
// hidden layer, biases everywhere.
ModelGraph make_mlp(const std::vector<int>& dims, Precision p, uint64_t seed);

// 3x32x32 classifier: conv 3x3/s2 + batchnorm + relu, five depthwise
// separable blocks (depthwise 3x3 + bn + relu, pointwise 1x1 + bn + relu),
// global average pool, dense head to 10 classes.  Convolutions carry no
// bias; the batchnorms do the shifting.  5,234 learnable parameters.
ModelGraph make_mobilenet_short(Precision p, uint64_t seed);

// "mlp:10-10-10-1" or "mobilenet-short".
ModelGraph make_from_arch(const std::string& arch, Precision p, uint64_t seed);

}  // namespace screx
