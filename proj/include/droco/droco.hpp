#pragma once

// Umbrella header.

#include "droco/dataset.hpp"
#include "droco/ensemble.hpp"
#include "droco/eval.hpp"
#include "droco/experiment.hpp"
#include "droco/gridworld.hpp"
#include "droco/learner.hpp"
#include "droco/mdp.hpp"
#include "droco/operators.hpp"
#include "droco/planning.hpp"
#include "droco/rng.hpp"
#include "droco/run_config.hpp"
#include "droco/transport.hpp"
#include "droco/verify.hpp"
