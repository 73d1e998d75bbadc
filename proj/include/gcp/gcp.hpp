#pragma once

#include "gcp/cp_core.hpp"
#include "gcp/engines.hpp"
#include "gcp/errors.hpp"
#include "gcp/eval.hpp"
#include "gcp/experiment.hpp"
#include "gcp/graph.hpp"
#include "gcp/io.hpp"
#include "gcp/model.hpp"
#include "gcp/rng.hpp"
#include "gcp/scores.hpp"
