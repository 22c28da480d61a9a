#pragma once

namespace eviseg {

// Scalar special functions for positive arguments. All three shift the
// argument upward by recurrence until the asymptotic series applies,
// keeping absolute error below 1e-10 without external dependencies.
// Non-positive input throws std::domain_error.

double digamma(double x);
double trigamma(double x);
double lgamma(double x);

}  // namespace eviseg
