#pragma once

// Structural parameters of the reaction-diffusion treatment model.

#include <cmath>

#include "kdiff/common.hpp"

namespace kdiff {

struct DiffusionParams {
  double delta = 0.15;   // temporal depreciation per period
  double lambda = 0.01;  // spatial decay per km (1/km convention throughout)
  double kappa = 2.0;    // treatment source intensity
  double beta = 1.0;     // production coefficient

  // Effective spatial decay rate of the steady-state field: kappa_s = sqrt(delta)/lambda.
  double kappa_s() const { return std::sqrt(delta) / lambda; }

  void validate() const {
    if (!(delta > 0.0 && delta < 1.0))
      throw validation_error("DiffusionParams: delta must lie in (0,1); delta <= 0 is the "
                             "growth regime the estimation framework excludes");
    if (!(lambda > 0.0)) throw validation_error("DiffusionParams: lambda must be > 0");
    if (!(kappa > 0.0)) throw validation_error("DiffusionParams: kappa must be > 0");
    if (!(beta > 0.0)) throw validation_error("DiffusionParams: beta must be > 0");
  }
};

}  // namespace kdiff
