#pragma once

#include "cell.hpp"
#include "channel.hpp"
#include "circuit.hpp"
#include "engine.hpp"
#include "metrics.hpp"
#include "netgraph.hpp"
#include "relay.hpp"
#include "runner.hpp"
#include "sched.hpp"
#include "simulation.hpp"
#include "spec.hpp"
#include "tcp.hpp"
#include "traffic.hpp"
