#pragma once

#include "safr/common.hpp"
#include "safr/rng.hpp"
#include "safr/repr_metrics.hpp"
#include "safr/data.hpp"
#include "safr/dataset_io.hpp"
#include "safr/vmask.hpp"
#include "safr/model.hpp"
#include "safr/loss.hpp"
#include "safr/checkpoint.hpp"
#include "safr/eval.hpp"
#include "safr/train.hpp"
#include "safr/sweep.hpp"
#include "safr/viz.hpp"
#include "safr/config.hpp"
