#pragma once

// Umbrella header for the whole library.

#include "lfocv/ar_trend.hpp"
#include "lfocv/common.hpp"
#include "lfocv/gpd.hpp"
#include "lfocv/json_io.hpp"
#include "lfocv/lfo.hpp"
#include "lfocv/manifest.hpp"
#include "lfocv/model.hpp"
#include "lfocv/psis.hpp"
#include "lfocv/simlab.hpp"
#include "lfocv/time_series.hpp"
