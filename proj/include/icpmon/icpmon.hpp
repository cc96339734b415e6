#pragma once

// Umbrella header: inductive conformal prediction assurance monitoring.

#include "icpmon/types.hpp"
#include "icpmon/kdtree.hpp"
#include "icpmon/nonconformity.hpp"
#include "icpmon/icp.hpp"
#include "icpmon/mlp.hpp"
#include "icpmon/evaluation.hpp"
#include "icpmon/io.hpp"
