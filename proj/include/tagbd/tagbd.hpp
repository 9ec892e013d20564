#pragma once

#include "tagbd/errors.hpp"
#include "tagbd/rng.hpp"
#include "tagbd/graph.hpp"
#include "tagbd/text.hpp"
#include "tagbd/tensor.hpp"
#include "tagbd/nn.hpp"
#include "tagbd/optim.hpp"
#include "tagbd/attack.hpp"
#include "tagbd/defense.hpp"
#include "tagbd/metrics.hpp"
#include "tagbd/config.hpp"
#include "tagbd/experiment.hpp"
