#pragma once

// Umbrella header for the whole engine.

#include "histofuse/augment.hpp"
#include "histofuse/breakhis.hpp"
#include "histofuse/errors.hpp"
#include "histofuse/graph.hpp"
#include "histofuse/image.hpp"
#include "histofuse/layers.hpp"
#include "histofuse/losses.hpp"
#include "histofuse/metrics.hpp"
#include "histofuse/models.hpp"
#include "histofuse/ops.hpp"
#include "histofuse/optim.hpp"
#include "histofuse/parallel.hpp"
#include "histofuse/pso.hpp"
#include "histofuse/rng.hpp"
#include "histofuse/schedule.hpp"
#include "histofuse/serialize.hpp"
#include "histofuse/svg.hpp"
#include "histofuse/synthetic.hpp"
#include "histofuse/tape.hpp"
#include "histofuse/tensor.hpp"
#include "histofuse/train.hpp"
