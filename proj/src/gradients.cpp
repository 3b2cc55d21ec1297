#include "bayesmesh/gradients.hpp"

#include <algorithm>

#include "bayesmesh/errors.hpp"

namespace bayesmesh {

GradientEvaluator::GradientEvaluator(NetworkSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
}

const LossGrad& GradientEvaluator::evaluate(std::span<const double> phases,
                                            std::span<const Sample> batch,
                                            const LossSpec& loss) {
  if (batch.empty()) throw InvalidArgument("loss_and_grad: empty batch");
  const TapeForward fwd = record_network(tape_, spec_, phases, batch);

  result_.data_loss = tape_.value(fwd.mean_cross_entropy)[0].real();
  result_.correct = 0;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < fwd.probabilities.size(); ++k) {
      if (tape_.value(fwd.probabilities[k])[b].real() >
          tape_.value(fwd.probabilities[best])[b].real()) {
        best = k;
      }
    }
    if (best == batch[b].label) ++result_.correct;
  }

  result_.grad.assign(phases.size(), 0.0);
  if (loss.data_weight != 0.0) {
    tape_.backward(fwd.mean_cross_entropy, result_.grad);
    if (loss.data_weight != 1.0) {
      for (double& g : result_.grad) g *= loss.data_weight;
    }
  }
  result_.loss = loss.data_weight * result_.data_loss;
  if (loss.prior != nullptr && loss.prior_weight != 0.0) {
    result_.loss += loss.prior_weight * regularization_term(phases, *loss.prior);
    add_regularization_gradient(phases, *loss.prior, loss.prior_weight, result_.grad);
  }
  return result_;
}

LossGrad loss_and_grad(const NetworkSpec& spec, std::span<const double> phases,
                       std::span<const Sample> batch, const LossSpec& loss) {
  GradientEvaluator ev(spec);
  return ev.evaluate(phases, batch, loss);
}

double evaluate_loss(const NetworkSpec& spec, std::span<const double> phases,
                     std::span<const Sample> batch, const LossSpec& loss) {
  if (batch.empty()) throw InvalidArgument("evaluate_loss: empty batch");
  double ce = 0.0;
  if (loss.data_weight != 0.0) {
    const CompiledNetwork net(spec, phases);
    std::vector<cplx> scratch(spec.ports);
    std::vector<double> probs(spec.classes);
    for (const Sample& s : batch) {
      net.probabilities(s.features, scratch, probs);
      ce += cross_entropy(probs, s.label);
    }
    ce /= static_cast<double>(batch.size());
  }
  double total = loss.data_weight * ce;
  if (loss.prior != nullptr && loss.prior_weight != 0.0) {
    total += loss.prior_weight * regularization_term(phases, *loss.prior);
  }
  return total;
}

std::vector<double> central_difference(const std::function<double(std::span<const double>)>& f,
                                       std::span<const double> x, double h) {
  if (!(h >= 1e-7 && h <= 1e-3)) throw InvalidArgument("central_difference: h must be in [1e-7, 1e-3]");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

std::vector<double> finite_diff_grad(const NetworkSpec& spec, std::span<const double> phases,
                                     std::span<const Sample> batch, const LossSpec& loss,
                                     double h) {
  return central_difference(
      [&](std::span<const double> p) { return evaluate_loss(spec, p, batch, loss); }, phases, h);
}

}  // namespace bayesmesh
