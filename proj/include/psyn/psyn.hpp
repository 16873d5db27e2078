#pragma once

#include "psyn/checkpoint.hpp"
#include "psyn/common.hpp"
#include "psyn/data.hpp"
#include "psyn/dataset.hpp"
#include "psyn/experiment.hpp"
#include "psyn/model.hpp"
#include "psyn/rng.hpp"
#include "psyn/sim.hpp"
#include "psyn/speedup.hpp"
#include "psyn/strategies.hpp"
#include "psyn/vec.hpp"
