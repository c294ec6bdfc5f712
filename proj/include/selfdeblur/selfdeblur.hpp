#pragma once

#include "selfdeblur/errors.hpp"
#include "selfdeblur/tensor.hpp"
#include "selfdeblur/rng.hpp"
#include "selfdeblur/autodiff.hpp"
#include "selfdeblur/ops.hpp"
#include "selfdeblur/gradcheck.hpp"
#include "selfdeblur/generators.hpp"
#include "selfdeblur/model.hpp"
#include "selfdeblur/solver.hpp"
#include "selfdeblur/metrics.hpp"
#include "selfdeblur/data.hpp"
#include "selfdeblur/image_io.hpp"
#include "selfdeblur/report_io.hpp"
#include "selfdeblur/verify.hpp"
