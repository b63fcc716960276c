#pragma once

#include "dscnet/ops/activation.hpp"
#include "dscnet/ops/conv.hpp"
#include "dscnet/ops/drop_path.hpp"
#include "dscnet/ops/linear.hpp"
#include "dscnet/ops/norm.hpp"
#include "dscnet/ops/pool.hpp"
