#pragma once

namespace sser::normal {

double pdf(double x);

/// Standard normal CDF.
double cdf(double x);

/// Upper tail 1 - cdf(x), accurate for large x.
double sf(double x);

/// Inverse standard normal CDF (Wichura AS241, ~1e-16 relative).
/// Returns -inf / +inf at p = 0 / 1.
double ppf(double p);

/// Inverse of the upper tail: returns x with sf(x) = q.
inline double isf(double q) { return -ppf(q); }

}  // namespace sser::normal
