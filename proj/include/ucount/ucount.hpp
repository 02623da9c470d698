#pragma once

// Everything, for programs that do not care about compile time.

#include "ucount/data/crop.hpp"
#include "ucount/data/generator.hpp"
#include "ucount/data/io.hpp"
#include "ucount/eval/metrics.hpp"
#include "ucount/experiment/config.hpp"
#include "ucount/experiment/pipeline.hpp"
#include "ucount/model/checkpoint.hpp"
#include "ucount/model/ctn.hpp"
#include "ucount/numerics/grad_check.hpp"
#include "ucount/selection/selection.hpp"
#include "ucount/training/trainer.hpp"
#include "ucount/uncertainty/sparsification.hpp"
