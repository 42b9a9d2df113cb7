#pragma once

#include "topkmip/error.hpp"
#include "topkmip/estimator.hpp"
#include "topkmip/geometry.hpp"
#include "topkmip/metrics.hpp"
#include "topkmip/phantom.hpp"
#include "topkmip/pipeline.hpp"
#include "topkmip/postprocess.hpp"
#include "topkmip/projection.hpp"
#include "topkmip/projector.hpp"
#include "topkmip/reconstruction.hpp"
#include "topkmip/stack.hpp"
#include "topkmip/volume.hpp"
