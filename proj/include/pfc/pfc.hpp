#pragma once

#include "pfc/core.hpp"
#include "pfc/data.hpp"
#include "pfc/etf.hpp"
#include "pfc/geodesic.hpp"
#include "pfc/harness.hpp"
#include "pfc/io.hpp"
#include "pfc/metrics.hpp"
#include "pfc/mnist.hpp"
#include "pfc/random.hpp"
#include "pfc/resnet.hpp"
#include "pfc/surrogate.hpp"
