#pragma once

#include "gmlot/spd.hpp"
#include "gmlot/sinkhorn.hpp"
#include "gmlot/gml.hpp"
#include "gmlot/adapt.hpp"
#include "gmlot/data.hpp"
#include "gmlot/experiment.hpp"
