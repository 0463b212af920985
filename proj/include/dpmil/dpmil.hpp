#pragma once

#include "dpmil/bagview.hpp"
#include "dpmil/config.hpp"
#include "dpmil/coteach.hpp"
#include "dpmil/errors.hpp"
#include "dpmil/fusion.hpp"
#include "dpmil/lof.hpp"
#include "dpmil/matrix.hpp"
#include "dpmil/metrics.hpp"
#include "dpmil/miltrain.hpp"
#include "dpmil/mlp.hpp"
#include "dpmil/pipeline.hpp"
#include "dpmil/resample.hpp"
#include "dpmil/rng.hpp"
#include "dpmil/synthdata.hpp"
#include "dpmil/text_io.hpp"
