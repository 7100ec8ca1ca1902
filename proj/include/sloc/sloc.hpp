#pragma once

#include "config.hpp"
#include "constants.hpp"
#include "coupling.hpp"
#include "diagnostics.hpp"
#include "engine.hpp"
#include "isoperimetry.hpp"
#include "measures.hpp"
#include "runner.hpp"
