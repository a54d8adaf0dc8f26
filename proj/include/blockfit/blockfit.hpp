#pragma once

#include "blockfit/error.hpp"
#include "blockfit/family.hpp"
#include "blockfit/graph.hpp"
#include "blockfit/prediction.hpp"
#include "blockfit/random.hpp"
#include "blockfit/selection.hpp"
#include "blockfit/simulation.hpp"
#include "blockfit/variational.hpp"
#include "blockfit/ward.hpp"
