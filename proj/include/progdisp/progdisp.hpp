#pragma once

#include "baselines.hpp"
#include "biaslab.hpp"
#include "dataset.hpp"
#include "density.hpp"
#include "diagnostics.hpp"
#include "draws.hpp"
#include "errors.hpp"
#include "fit.hpp"
#include "inference.hpp"
#include "io.hpp"
#include "layout.hpp"
#include "model.hpp"
#include "moments.hpp"
#include "rng.hpp"
#include "sampler.hpp"
#include "simulate.hpp"
#include "stats.hpp"
#include "svg.hpp"
