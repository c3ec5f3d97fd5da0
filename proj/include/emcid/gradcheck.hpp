#pragma once

#include <functional>

#include "emcid/matrix.hpp"

namespace emcid {

// Central finite differences of a scalar function at x, step h per
// coordinate. The standard test oracle for the gradient tape; kept
// independent of it by construction (only calls f).
Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f, const Matrix& x, double h);

// max_i |a_i - b_i| / max(1, ||a||_inf, ||b||_inf)
double max_rel_error(const Matrix& a, const Matrix& b);

}  // namespace emcid
