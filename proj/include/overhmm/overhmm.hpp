#pragma once

#include "overhmm/error.hpp"
#include "overhmm/random.hpp"
#include "overhmm/model.hpp"
#include "overhmm/priors.hpp"
#include "overhmm/sampler.hpp"
#include "overhmm/tempering.hpp"
#include "overhmm/analysis.hpp"
#include "overhmm/io.hpp"
#include "overhmm/experiment.hpp"
