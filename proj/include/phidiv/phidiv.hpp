#pragma once

// Survey-weighted multinomial logistic models fitted by minimum
// phi-divergence (Cressie-Read family), with linearization-based inference,
// intra-cluster correlation estimators, overdispersed multinomial samplers,
// and a simulation harness.

#include "phidiv/cressie_read.hpp"
#include "phidiv/csv.hpp"
#include "phidiv/divergence.hpp"
#include "phidiv/errors.hpp"
#include "phidiv/estimation.hpp"
#include "phidiv/inference.hpp"
#include "phidiv/samplers.hpp"
#include "phidiv/simulate.hpp"
#include "phidiv/survey_model.hpp"
