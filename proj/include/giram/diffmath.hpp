#pragma once

#include "giram/ad/adam.hpp"
#include "giram/ad/checkpoint.hpp"
#include "giram/ad/gradcheck.hpp"
#include "giram/ad/layers.hpp"
#include "giram/ad/ops.hpp"
#include "giram/ad/tape.hpp"
#include "giram/ad/tensor.hpp"

namespace giram {
using ad::Matrix;
using ad::Vector;
}  // namespace giram
