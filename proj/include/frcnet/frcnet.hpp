#pragma once

#include "frcnet/errors.hpp"
#include "frcnet/tensor.hpp"
#include "frcnet/autograd.hpp"
#include "frcnet/ops.hpp"
#include "frcnet/nn.hpp"
#include "frcnet/backbone.hpp"
#include "frcnet/frequency.hpp"
#include "frcnet/region.hpp"
#include "frcnet/losses.hpp"
#include "frcnet/model.hpp"
#include "frcnet/mean_teacher.hpp"
#include "frcnet/optim.hpp"
#include "frcnet/metrics.hpp"
#include "frcnet/data.hpp"
#include "frcnet/config.hpp"
#include "frcnet/checkpoint.hpp"
#include "frcnet/trainer.hpp"
