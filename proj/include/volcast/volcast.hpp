#pragma once

#include "volcast/autodiff.hpp"
#include "volcast/backtest.hpp"
#include "volcast/config.hpp"
#include "volcast/data.hpp"
#include "volcast/distributions.hpp"
#include "volcast/ensemble.hpp"
#include "volcast/error.hpp"
#include "volcast/experiments.hpp"
#include "volcast/metrics.hpp"
#include "volcast/network.hpp"
#include "volcast/quadrature.hpp"
#include "volcast/special.hpp"
#include "volcast/tabular.hpp"
#include "volcast/tensor.hpp"
#include "volcast/training.hpp"
#include "volcast/verify.hpp"
