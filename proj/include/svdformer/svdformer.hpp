#pragma once

#include "svdformer/adam.hpp"
#include "svdformer/checkpoint.hpp"
#include "svdformer/config.hpp"
#include "svdformer/errors.hpp"
#include "svdformer/gradcheck.hpp"
#include "svdformer/metrics.hpp"
#include "svdformer/model.hpp"
#include "svdformer/nn.hpp"
#include "svdformer/ops.hpp"
#include "svdformer/pointcloud.hpp"
#include "svdformer/pointops.hpp"
#include "svdformer/rng.hpp"
#include "svdformer/sdg.hpp"
#include "svdformer/selfview.hpp"
#include "svdformer/svfnet.hpp"
#include "svdformer/tensor.hpp"
#include "svdformer/training.hpp"
