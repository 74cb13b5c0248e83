#pragma once

#include "hcdb/beta_em.hpp"
#include "hcdb/distributions.hpp"
#include "hcdb/errors.hpp"
#include "hcdb/freq.hpp"
#include "hcdb/inference.hpp"
#include "hcdb/io.hpp"
#include "hcdb/map_prior.hpp"
#include "hcdb/methods.hpp"
#include "hcdb/mixture.hpp"
#include "hcdb/model.hpp"
#include "hcdb/nnhm.hpp"
#include "hcdb/posterior.hpp"
#include "hcdb/priors.hpp"
#include "hcdb/rng.hpp"
#include "hcdb/simharness.hpp"
#include "hcdb/version.hpp"
#include "hcdb/workflows.hpp"
