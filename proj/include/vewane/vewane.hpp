#pragma once

#include "vewane/cox.hpp"
#include "vewane/csv.hpp"
#include "vewane/error.hpp"
#include "vewane/estimating.hpp"
#include "vewane/logistic.hpp"
#include "vewane/mc_study.hpp"
#include "vewane/nuisance.hpp"
#include "vewane/pipeline.hpp"
#include "vewane/processes.hpp"
#include "vewane/record.hpp"
#include "vewane/rng.hpp"
#include "vewane/serialize.hpp"
#include "vewane/simulation.hpp"
#include "vewane/solver.hpp"
#include "vewane/step_function.hpp"
#include "vewane/timeline.hpp"
#include "vewane/waning.hpp"
