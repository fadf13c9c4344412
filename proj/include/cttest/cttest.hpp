#pragma once

// Umbrella header.

#include "cttest/core.hpp"
#include "cttest/splines.hpp"
#include "cttest/features.hpp"
#include "cttest/estimator.hpp"
#include "cttest/simulate.hpp"
#include "cttest/baselines.hpp"
#include "cttest/harness.hpp"
#include "cttest/io.hpp"
