#pragma once

// Umbrella header for the scale-space invariant attention deraining library.

#include "ssia/checkpoint.hpp"
#include "ssia/config.hpp"
#include "ssia/derain_net.hpp"
#include "ssia/image_io.hpp"
#include "ssia/metrics.hpp"
#include "ssia/scale_space.hpp"
#include "ssia/sian.hpp"
#include "ssia/tensor.hpp"
#include "ssia/training.hpp"
