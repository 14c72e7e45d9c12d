#pragma once

namespace spx {

// Standard normal CDF.
double normal_cdf(double z) noexcept;

// Inverse of the standard normal CDF for p in (0, 1). Acklam's rational
// approximation followed by one Halley step against erfc.
double inv_normal_cdf(double p);

double gelu(double x) noexcept;

} // namespace spx
