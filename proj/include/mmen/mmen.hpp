#pragma once

#include "mmen/checkpoint.hpp"
#include "mmen/data.hpp"
#include "mmen/experiment.hpp"
#include "mmen/gradcheck.hpp"
#include "mmen/metrics.hpp"
#include "mmen/net.hpp"
#include "mmen/objectives.hpp"
#include "mmen/optim.hpp"
#include "mmen/rng.hpp"
#include "mmen/tensor.hpp"
#include "mmen/trainer.hpp"
