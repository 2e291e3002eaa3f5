#pragma once

// Umbrella header for the ST-ERF analysis toolkit.

#include "sterf/arch.hpp"
#include "sterf/config.hpp"
#include "sterf/erf.hpp"
#include "sterf/errors.hpp"
#include "sterf/io.hpp"
#include "sterf/lif.hpp"
#include "sterf/network.hpp"
#include "sterf/oracle.hpp"
#include "sterf/params.hpp"
#include "sterf/presets.hpp"
#include "sterf/rng.hpp"
#include "sterf/tape.hpp"
#include "sterf/tensor.hpp"
#include "sterf/version.hpp"
