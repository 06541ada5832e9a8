#pragma once

// Umbrella header for the addr cross-modal metric-learning laboratory.

#include "addr/ablation.hpp"
#include "addr/binio.hpp"
#include "addr/data.hpp"
#include "addr/discriminator.hpp"
#include "addr/encoders.hpp"
#include "addr/errors.hpp"
#include "addr/evaluation.hpp"
#include "addr/gradcheck.hpp"
#include "addr/numerics.hpp"
#include "addr/regularizer.hpp"
#include "addr/runconfig.hpp"
#include "addr/similarity.hpp"
#include "addr/trainer.hpp"
