#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "bayesmesh/network.hpp"
#include "bayesmesh/prior.hpp"
#include "bayesmesh/sample.hpp"
#include "bayesmesh/tape.hpp"

namespace bayesmesh {

/// loss = data_weight * mean batch cross-entropy + prior_weight * L_R.
/// `prior` is non-owning; nullptr means no prior term.
struct LossSpec {
  double data_weight = 1.0;
  const GaussianPrior* prior = nullptr;
  double prior_weight = 1.0;
};

struct LossGrad {
  double loss = 0.0;
  double data_loss = 0.0;       // unweighted mean cross-entropy
  std::size_t correct = 0;      // batch argmax hits, for training logs
  std::vector<double> grad;
};

/// Owns a tape that is reused across evaluations; not thread-safe, use one
/// per thread.
class GradientEvaluator {
 public:
  explicit GradientEvaluator(NetworkSpec spec);

  /// Loss and exact gradient w.r.t. every phase. The result is overwritten by
  /// the next call.
  const LossGrad& evaluate(std::span<const double> phases, std::span<const Sample> batch,
                           const LossSpec& loss);

  [[nodiscard]] const GradientTape& tape() const noexcept { return tape_; }
  [[nodiscard]] const NetworkSpec& spec() const noexcept { return spec_; }

 private:
  NetworkSpec spec_;
  GradientTape tape_;
  LossGrad result_;
};

LossGrad loss_and_grad(const NetworkSpec& spec, std::span<const double> phases,
                       std::span<const Sample> batch, const LossSpec& loss);

/// Loss evaluated on the plain forward path (no tape).
double evaluate_loss(const NetworkSpec& spec, std::span<const double> phases,
                     std::span<const Sample> batch, const LossSpec& loss);

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h. h must lie in [1e-7, 1e-3].
std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double h);

/// Central-difference gradient of evaluate_loss; independent of the tape.
std::vector<double> finite_diff_grad(const NetworkSpec& spec, std::span<const double> phases,
                                     std::span<const Sample> batch, const LossSpec& loss,
                                     double h);

}  // namespace bayesmesh
