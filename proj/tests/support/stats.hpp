#pragma once

#include <boost/math/distributions/chi_squared.hpp>

#include <span>
#include <stdexcept>

namespace netconv::testing {

// Pearson goodness-of-fit p-value for observed counts against expected counts.
inline double chi_square_p_value(std::span<const double> observed, std::span<const double> expected,
                                 int fitted_parameters = 0) {
  if (observed.size() != expected.size() || observed.size() < 2) throw std::invalid_argument("chi-square bins");
  double stat = 0.0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    const double diff = observed[i] - expected[i];
    stat += diff * diff / expected[i];
  }
  const boost::math::chi_squared dist(static_cast<double>(observed.size()) - 1.0 - fitted_parameters);
  return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace netconv::testing
