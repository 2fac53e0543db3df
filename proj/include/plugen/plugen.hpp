#pragma once

#include "plugen/error.hpp"
#include "plugen/numerics.hpp"
#include "plugen/flow.hpp"
#include "plugen/priors.hpp"
#include "plugen/training.hpp"
#include "plugen/backbone.hpp"
#include "plugen/inference.hpp"
#include "plugen/evaluation.hpp"
#include "plugen/io.hpp"
#include "plugen/config.hpp"
#include "plugen/gradcheck.hpp"
