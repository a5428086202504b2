// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "revive/block_table.hpp"
#include "revive/cluster.hpp"
#include "revive/comm_domain.hpp"
#include "revive/error.hpp"
#include "revive/failure_detection.hpp"
#include "revive/graph_compile.hpp"
#include "revive/latency.hpp"
#include "revive/orchestrator.hpp"
#include "revive/router_sim.hpp"
#include "revive/scenario.hpp"
#include "revive/sequence_state.hpp"
#include "revive/trace.hpp"
#include "revive/types.hpp"
#include "revive/weight_integrity.hpp"
