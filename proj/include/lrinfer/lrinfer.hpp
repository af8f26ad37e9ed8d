#pragma once

// Umbrella header for the estimation library (the CLI lives in cli.hpp).

#include "lrinfer/error.hpp"
#include "lrinfer/panel.hpp"
#include "lrinfer/svd.hpp"
#include "lrinfer/nuclear_solver.hpp"
#include "lrinfer/two_step.hpp"
#include "lrinfer/inference.hpp"
#include "lrinfer/treatment.hpp"
#include "lrinfer/rank_select.hpp"
#include "lrinfer/simulation.hpp"
#include "lrinfer/io.hpp"
