#pragma once

#include "lssbm/clustering.hpp"
#include "lssbm/common.hpp"
#include "lssbm/evaluation.hpp"
#include "lssbm/graph.hpp"
#include "lssbm/io.hpp"
#include "lssbm/karnataka.hpp"
#include "lssbm/mcmc.hpp"
#include "lssbm/model.hpp"
#include "lssbm/postprocess.hpp"
#include "lssbm/random.hpp"
#include "lssbm/selection.hpp"
#include "lssbm/twostage.hpp"
