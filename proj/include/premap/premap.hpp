#ifndef PREMAP_PREMAP_HPP
#define PREMAP_PREMAP_HPP

// Umbrella header: guaranteed under- and over-approximations of neural
// network preimages as disjoint unions of polytopes, plus quantitative
// verification on top of the under-approximation engine.

#include "premap/approx.hpp"
#include "premap/common.hpp"
#include "premap/geometry.hpp"
#include "premap/json_io.hpp"
#include "premap/model.hpp"
#include "premap/oracle.hpp"
#include "premap/quant.hpp"
#include "premap/refine.hpp"
#include "premap/relax.hpp"
#include "premap/rng.hpp"
#include "premap/svg.hpp"

#endif  // PREMAP_PREMAP_HPP
