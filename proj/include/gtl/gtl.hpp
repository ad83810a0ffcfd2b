#pragma once

#include "gtl/config.hpp"
#include "gtl/errors.hpp"
#include "gtl/experiments.hpp"
#include "gtl/guidance.hpp"
#include "gtl/io.hpp"
#include "gtl/nn.hpp"
#include "gtl/parallel.hpp"
#include "gtl/report.hpp"
#include "gtl/rng.hpp"
#include "gtl/scouting.hpp"
#include "gtl/tasks.hpp"
#include "gtl/training.hpp"
