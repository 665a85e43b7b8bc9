#pragma once

#include "rlfn/bench.hpp"
#include "rlfn/checkpoint.hpp"
#include "rlfn/config.hpp"
#include "rlfn/data.hpp"
#include "rlfn/eval.hpp"
#include "rlfn/image.hpp"
#include "rlfn/losses.hpp"
#include "rlfn/metrics.hpp"
#include "rlfn/model.hpp"
#include "rlfn/optim.hpp"
#include "rlfn/prune.hpp"
#include "rlfn/synth.hpp"
#include "rlfn/trainer.hpp"
