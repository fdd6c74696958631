#pragma once

#include "clfshape/core.hpp"
#include "clfshape/dynamics.hpp"
#include "clfshape/quadratics.hpp"
#include "clfshape/costs.hpp"
#include "clfshape/grid.hpp"
#include "clfshape/gridsolve.hpp"
#include "clfshape/clf.hpp"
#include "clfshape/analysis.hpp"
#include "clfshape/config.hpp"
#include "clfshape/report.hpp"
#include "clfshape/experiment.hpp"
