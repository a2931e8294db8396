#pragma once

// Umbrella header.

#include "graphfnp/adam.hpp"
#include "graphfnp/checkpoint.hpp"
#include "graphfnp/datasets.hpp"
#include "graphfnp/decoder.hpp"
#include "graphfnp/encoder.hpp"
#include "graphfnp/errors.hpp"
#include "graphfnp/fnp.hpp"
#include "graphfnp/gaussian.hpp"
#include "graphfnp/gradcheck.hpp"
#include "graphfnp/graph.hpp"
#include "graphfnp/metrics.hpp"
#include "graphfnp/model.hpp"
#include "graphfnp/nn.hpp"
#include "graphfnp/parallel.hpp"
#include "graphfnp/rationale.hpp"
#include "graphfnp/rng.hpp"
#include "graphfnp/tape.hpp"
#include "graphfnp/trainer.hpp"
