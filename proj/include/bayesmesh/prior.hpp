#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <vector>

namespace bayesmesh {

/// Isotropic Gaussian prior over phases with a common scalar deviation.
/// An infinite deviation is the flat (log-likelihood) limit.
struct GaussianPrior {
  std::vector<double> mean;
  double sigma = std::numeric_limits<double>::infinity();

  [[nodiscard]] bool is_flat() const { return std::isinf(sigma); }
};

/// Throws InvalidArgument unless sigma > 0 (or +inf) and the mean is finite.
void validate(const GaussianPrior& prior);

/// 0.5 * sum (phi_i - mu_i)^2 / sigma^2; 0 for a flat prior.
double regularization_term(std::span<const double> phases, const GaussianPrior& prior);

/// grad += weight * (phi - mu) / sigma^2.
void add_regularization_gradient(std::span<const double> phases, const GaussianPrior& prior,
                                 double weight, std::span<double> grad);

}  // namespace bayesmesh
