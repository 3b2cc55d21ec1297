#include "bayesmesh/prior.hpp"

#include <cmath>

#include "bayesmesh/errors.hpp"

namespace bayesmesh {

void validate(const GaussianPrior& prior) {
  if (!(prior.sigma > 0.0)) throw InvalidArgument("prior: sigma must be positive or infinite");
  for (double m : prior.mean) {
    if (!std::isfinite(m)) throw InvalidArgument("prior: mean must be finite");
  }
}

double regularization_term(std::span<const double> phases, const GaussianPrior& prior) {
  if (prior.is_flat()) return 0.0;
  if (phases.size() != prior.mean.size()) throw ShapeError("regularization_term: size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < phases.size(); ++i) {
    const double d = phases[i] - prior.mean[i];
    s += d * d;
  }
  return 0.5 * s / (prior.sigma * prior.sigma);
}

void add_regularization_gradient(std::span<const double> phases, const GaussianPrior& prior,
                                 double weight, std::span<double> grad) {
  if (prior.is_flat()) return;
  if (phases.size() != prior.mean.size() || grad.size() != phases.size()) {
    throw ShapeError("add_regularization_gradient: size mismatch");
  }
  const double k = weight / (prior.sigma * prior.sigma);
  for (std::size_t i = 0; i < phases.size(); ++i) grad[i] += k * (phases[i] - prior.mean[i]);
}

}  // namespace bayesmesh
