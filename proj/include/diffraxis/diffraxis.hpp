#pragma once

#include "baseline.hpp"
#include "bfgs.hpp"
#include "crystallography.hpp"
#include "diffractogram.hpp"
#include "error.hpp"
#include "io.hpp"
#include "multiscale.hpp"
#include "peak_fit.hpp"
#include "pearson.hpp"
#include "pipeline.hpp"
#include "random.hpp"
#include "synthetic.hpp"
#include "taut_string.hpp"
#include "variance_segmentation.hpp"
#include "weighted_spline.hpp"
