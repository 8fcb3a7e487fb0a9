#pragma once

#include "aggmarkov/core_model.hpp"
#include "aggmarkov/duality.hpp"
#include "aggmarkov/error.hpp"
#include "aggmarkov/experiments.hpp"
#include "aggmarkov/format.hpp"
#include "aggmarkov/io.hpp"
#include "aggmarkov/markov_sim.hpp"
#include "aggmarkov/proximal_estimator.hpp"
#include "aggmarkov/random.hpp"
#include "aggmarkov/sinkhorn.hpp"
