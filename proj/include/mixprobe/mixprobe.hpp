#pragma once

// Umbrella header: likelihood surface probing for the twin-pair Gaussian
// mixture via NUTS sampling and optimizer restarts.

#include "mixprobe/diagnostics.hpp"
#include "mixprobe/errors.hpp"
#include "mixprobe/explorer.hpp"
#include "mixprobe/io.hpp"
#include "mixprobe/nuts.hpp"
#include "mixprobe/optimizer.hpp"
#include "mixprobe/params.hpp"
#include "mixprobe/seed.hpp"
#include "mixprobe/target.hpp"
#include "mixprobe/twin_model.hpp"
