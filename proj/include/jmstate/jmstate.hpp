#pragma once

// Everything in one include.
#include "jmstate/config.hpp"
#include "jmstate/core.hpp"
#include "jmstate/dataset.hpp"
#include "jmstate/design.hpp"
#include "jmstate/functions.hpp"
#include "jmstate/graph.hpp"
#include "jmstate/inference.hpp"
#include "jmstate/io.hpp"
#include "jmstate/likelihood.hpp"
#include "jmstate/parallel.hpp"
#include "jmstate/params.hpp"
#include "jmstate/predict.hpp"
#include "jmstate/quadrature.hpp"
#include "jmstate/random.hpp"
#include "jmstate/sampler.hpp"
#include "jmstate/simulate.hpp"
#include "jmstate/stats.hpp"
