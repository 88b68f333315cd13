#ifndef MLLOO_MLLOO_HPP
#define MLLOO_MLLOO_HPP

// Umbrella header for the whole toolkit.

#include "mlloo/attacks.hpp"
#include "mlloo/attribution.hpp"
#include "mlloo/config.hpp"
#include "mlloo/dataset.hpp"
#include "mlloo/detector.hpp"
#include "mlloo/dispersion.hpp"
#include "mlloo/evaluation.hpp"
#include "mlloo/experiment.hpp"
#include "mlloo/io.hpp"
#include "mlloo/net.hpp"
#include "mlloo/parallel.hpp"
#include "mlloo/rng.hpp"
#include "mlloo/tensor.hpp"

#endif // MLLOO_MLLOO_HPP
