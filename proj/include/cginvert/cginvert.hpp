#pragma once

#include "common.hpp"
#include "config.hpp"
#include "conv.hpp"
#include "covariance.hpp"
#include "data.hpp"
#include "drcgnet.hpp"
#include "gcgls.hpp"
#include "image_io.hpp"
#include "metrics.hpp"
#include "regularizer.hpp"
#include "scale_step.hpp"
#include "sensing.hpp"
#include "tikhonov.hpp"
#include "train.hpp"
