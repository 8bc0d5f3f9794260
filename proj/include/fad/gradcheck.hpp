#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "fad/autograd.hpp"

namespace fad::nn {

using ScalarFn = std::function<Var<double>(Graph<double>&, Var<double>)>;
using ParamScalarFn = std::function<Var<double>(Graph<double>&)>;

// Max over coordinates of |analytic - central difference| / max(1, |central
// difference|). `f` must return a one-element Var.
double grad_check(const ScalarFn& f, const Tensor<double>& x, double h = 1e-4);

// Same measure with respect to parameters that `f` reads through
// Graph::param. At most `max_coords` evenly strided coordinates are probed
// per parameter (0 = all).
double grad_check_params(const ParamScalarFn& f,
                         const std::vector<Parameter<double>*>& params,
                         double h = 1e-4, std::size_t max_coords = 0);

} // namespace fad::nn
