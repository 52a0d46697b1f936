#pragma once

#include "binary_vector.hpp"
#include "bench.hpp"
#include "binmodel.hpp"
#include "data.hpp"
#include "mcmc.hpp"
#include "parallel.hpp"
#include "posterior.hpp"
#include "rng.hpp"
#include "smc.hpp"
