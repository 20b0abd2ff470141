// SPDX-License-Identifier: MIT
#pragma once

#include <stdexcept>
#include <string>

namespace tube {

// Base class for every failure the library reports deliberately.  Each
// condition gets its own type so callers can distinguish "your geometry is
// broken" from "this estimator did not collect enough data" without parsing
// message strings.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

#define TUBE_DEFINE_ERROR(NAME)                  \
  struct NAME : Error {                          \
    using Error::Error;                          \
  }

// Geometry / configuration.
TUBE_DEFINE_ERROR(EmptyConfiguration);
TUBE_DEFINE_ERROR(InvalidConfiguration);
TUBE_DEFINE_ERROR(CorridorFound);
TUBE_DEFINE_ERROR(ValidationFailed);
TUBE_DEFINE_ERROR(ConfigError);

// Dynamics.
TUBE_DEFINE_ERROR(NoCollisionWithinHorizon);
TUBE_DEFINE_ERROR(NotIncoming);

// Estimators / statistics.
TUBE_DEFINE_ERROR(InsufficientSamples);
TUBE_DEFINE_ERROR(TooFewSurvivors);
TUBE_DEFINE_ERROR(InsufficientHits);
TUBE_DEFINE_ERROR(TooFewSamples);
TUBE_DEFINE_ERROR(NonPositiveProbability);
TUBE_DEFINE_ERROR(DegenerateDesign);
TUBE_DEFINE_ERROR(GridMismatch);

// Analytic evaluators.
TUBE_DEFINE_ERROR(DomainError);
TUBE_DEFINE_ERROR(NonPositiveInput);
TUBE_DEFINE_ERROR(NonPositiveDefinite);
TUBE_DEFINE_ERROR(QuadratureFailure);

// Persistence.
TUBE_DEFINE_ERROR(CheckpointVersionMismatch);
TUBE_DEFINE_ERROR(CorruptCheckpoint);

#undef TUBE_DEFINE_ERROR

}  // namespace tube
