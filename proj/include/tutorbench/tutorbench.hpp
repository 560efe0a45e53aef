#pragma once
// Umbrella header for the tutorbench teaching-effectiveness harness.

#include "tutorbench/common.hpp"
#include "tutorbench/corpus.hpp"
#include "tutorbench/gateway.hpp"
#include "tutorbench/agents.hpp"
#include "tutorbench/metrics.hpp"
#include "tutorbench/protocol.hpp"
#include "tutorbench/judge.hpp"
#include "tutorbench/review.hpp"
#include "tutorbench/config.hpp"
