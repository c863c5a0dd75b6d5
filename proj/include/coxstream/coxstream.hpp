#pragma once

// Streaming proportional-hazards diagnostics: block-wise Cox fits, the
// Grambsch-Therneau test in full-data and online-updating (cumulative and
// moving-window) forms, and the AEE/CEE/CUEE coefficient recursions.

#include "coxstream/checkpoint.hpp"
#include "coxstream/chisq.hpp"
#include "coxstream/cli.hpp"
#include "coxstream/csv.hpp"
#include "coxstream/errors.hpp"
#include "coxstream/experiments.hpp"
#include "coxstream/gt_test.hpp"
#include "coxstream/linalg.hpp"
#include "coxstream/online.hpp"
#include "coxstream/residuals.hpp"
#include "coxstream/rng.hpp"
#include "coxstream/simulate.hpp"
#include "coxstream/survival.hpp"
