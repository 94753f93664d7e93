#pragma once

#include "vmest/error.hpp"
#include "vmest/numkit/distributions.hpp"
#include "vmest/numkit/finite_diff.hpp"
#include "vmest/numkit/linalg.hpp"
#include "vmest/numkit/optimize.hpp"
#include "vmest/numkit/parallel.hpp"
#include "vmest/numkit/rng.hpp"
#include "vmest/numkit/types.hpp"
#include "vmest/quadrature.hpp"
#include "vmest/core/model.hpp"
#include "vmest/core/profile.hpp"
#include "vmest/core/fit.hpp"
#include "vmest/sandwich.hpp"
#include "vmest/consistency.hpp"
#include "vmest/onestep.hpp"
#include "vmest/models/expmix.hpp"
#include "vmest/models/expmix_vb.hpp"
#include "vmest/models/glmm_ri.hpp"
#include "vmest/harness/study.hpp"
