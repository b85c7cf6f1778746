#pragma once

#include "mstdim/error.hpp"
#include "mstdim/rng.hpp"
#include "mstdim/numerics/tensor.hpp"
#include "mstdim/numerics/ops.hpp"
#include "mstdim/numerics/adam.hpp"
#include "mstdim/numerics/gradcheck.hpp"
#include "mstdim/numerics/checkpoint.hpp"
#include "mstdim/envsim/variables.hpp"
#include "mstdim/envsim/env.hpp"
#include "mstdim/envsim/dataset.hpp"
#include "mstdim/masking/mask.hpp"
#include "mstdim/encoder/encoder.hpp"
#include "mstdim/contrastive/losses.hpp"
#include "mstdim/contrastive/pretrain.hpp"
#include "mstdim/probe/metrics.hpp"
#include "mstdim/probe/report.hpp"
#include "mstdim/probe/probe.hpp"
#include "mstdim/runner/config.hpp"
#include "mstdim/runner/runner.hpp"
#include "mstdim/runner/emit.hpp"
