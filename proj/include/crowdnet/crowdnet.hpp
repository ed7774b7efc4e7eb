// Umbrella header.
#pragma once

#include "crowdnet/augment.hpp"
#include "crowdnet/conv.hpp"
#include "crowdnet/density.hpp"
#include "crowdnet/elementwise.hpp"
#include "crowdnet/image.hpp"
#include "crowdnet/io.hpp"
#include "crowdnet/model.hpp"
#include "crowdnet/pool.hpp"
#include "crowdnet/resize.hpp"
#include "crowdnet/rng.hpp"
#include "crowdnet/tensor.hpp"
#include "crowdnet/train.hpp"
#include "crowdnet/weights_io.hpp"
