#pragma once

// Umbrella header for the whole library.

#include "autodiff.hpp"
#include "backbones.hpp"
#include "checkpoint.hpp"
#include "config.hpp"
#include "datapipe.hpp"
#include "error.hpp"
#include "gradcheck.hpp"
#include "graph.hpp"
#include "metrics.hpp"
#include "ops.hpp"
#include "optimizer.hpp"
#include "rng.hpp"
#include "tensor.hpp"
#include "tensor_io.hpp"
#include "trainer.hpp"
