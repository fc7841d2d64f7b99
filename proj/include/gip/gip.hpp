#pragma once

// Umbrella header.

#include "gip/ascent.hpp"
#include "gip/container.hpp"
#include "gip/error.hpp"
#include "gip/gating.hpp"
#include "gip/image.hpp"
#include "gip/network.hpp"
#include "gip/pathspace.hpp"
#include "gip/pullback.hpp"
#include "gip/render.hpp"
#include "gip/rng.hpp"
#include "gip/stability.hpp"
#include "gip/verify.hpp"
