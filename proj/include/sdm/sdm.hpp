#pragma once

#include "sdm/adam.hpp"
#include "sdm/checkpoint.hpp"
#include "sdm/data.hpp"
#include "sdm/diffusion.hpp"
#include "sdm/error.hpp"
#include "sdm/eval.hpp"
#include "sdm/net.hpp"
#include "sdm/plot.hpp"
#include "sdm/rng.hpp"
#include "sdm/schedule.hpp"
#include "sdm/train.hpp"
