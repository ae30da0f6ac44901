#pragma once

// Everything except the scenario/report layer, which additionally needs json.hpp.

#include "impulse_gcac/errors.hpp"
#include "impulse_gcac/linalg.hpp"
#include "impulse_gcac/observability.hpp"
#include "impulse_gcac/schedule.hpp"
#include "impulse_gcac/spectral.hpp"
#include "impulse_gcac/synthesis.hpp"
#include "impulse_gcac/witness.hpp"
