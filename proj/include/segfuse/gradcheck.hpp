#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <vector>
#include <span>

#include "segfuse/tape.hpp"

namespace segfuse {

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

using ScalarFn = std::function<Var<double>(Tape<double>&, Var<double>)>;
using ClosedScalarFn = std::function<Var<double>(Tape<double>&)>;

/// Worst relative error between the taped gradient of fn at x and central
/// differences (f(x+eps) - f(x-eps)) / (2 eps). Checks every coordinate when
/// `coords` is empty.
double grad_check(const ScalarFn& fn, const Tensor64& x, double eps = 1e-5,
                  std::span<const std::size_t> coords = {});

/// Same check with respect to a parameter that fn reads through the tape.
/// The parameter value is restored afterwards and its grad left zeroed.
double grad_check_parameter(const ClosedScalarFn& fn, Parameter<double>& p, double eps = 1e-5,
                            std::span<const std::size_t> coords = {});

/// Up to `want` coordinates, in random order, whose +-radius segment along
/// that axis leaves every relu mask and pool argmax of fn unchanged, so
/// central differences there never straddle a kink.
std::vector<std::size_t> smooth_coordinates(const ScalarFn& fn, const Tensor64& x, double radius, std::size_t want,
                                            std::mt19937_64& rng);
std::vector<std::size_t> smooth_coordinates(const ClosedScalarFn& fn, Parameter<double>& p, double radius,
                                            std::size_t want, std::mt19937_64& rng);

}  // namespace segfuse
