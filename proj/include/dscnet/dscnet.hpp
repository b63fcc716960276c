#pragma once

#include "dscnet/augment.hpp"
#include "dscnet/checkpoint.hpp"
#include "dscnet/evalkit.hpp"
#include "dscnet/frontend.hpp"
#include "dscnet/model/zoo.hpp"
#include "dscnet/nn_ops.hpp"
#include "dscnet/pipeline.hpp"
#include "dscnet/profiler.hpp"
#include "dscnet/runtime.hpp"
#include "dscnet/tensor.hpp"
#include "dscnet/trainer.hpp"
