#pragma once

// Umbrella header: the full harness.

#include "popbench/analysis.hpp"
#include "popbench/cli.hpp"
#include "popbench/config.hpp"
#include "popbench/csv.hpp"
#include "popbench/datamodel.hpp"
#include "popbench/evaluation.hpp"
#include "popbench/geometry.hpp"
#include "popbench/linkage.hpp"
#include "popbench/models.hpp"
#include "popbench/report.hpp"
#include "popbench/rng.hpp"
#include "popbench/splits.hpp"
#include "popbench/stats.hpp"
#include "popbench/synth.hpp"
#include "popbench/util.hpp"
