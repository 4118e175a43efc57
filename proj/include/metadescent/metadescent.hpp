#pragma once

#include "metadescent/bounds.hpp"
#include "metadescent/config.hpp"
#include "metadescent/csv.hpp"
#include "metadescent/errors.hpp"
#include "metadescent/experiments.hpp"
#include "metadescent/meta_system.hpp"
#include "metadescent/rng.hpp"
#include "metadescent/run_config.hpp"
#include "metadescent/solvers.hpp"
#include "metadescent/task_gen.hpp"
