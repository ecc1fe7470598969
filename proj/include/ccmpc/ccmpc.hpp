#pragma once

#include "condense.hpp"
#include "constraints.hpp"
#include "controller.hpp"
#include "moments.hpp"
#include "network.hpp"
#include "plot.hpp"
#include "plant.hpp"
#include "qp.hpp"
#include "quantile.hpp"
#include "report.hpp"
#include "scenario.hpp"
#include "simulation.hpp"
#include "uncertainty.hpp"
