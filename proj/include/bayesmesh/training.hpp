#pragma once

// Offline training: log-likelihood, L2-regularized MAP and single-sample
// variational Bayes over the network phases.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bayesmesh/gradients.hpp"
#include "bayesmesh/mesh.hpp"
#include "bayesmesh/network.hpp"
#include "bayesmesh/prior.hpp"
#include "bayesmesh/rng.hpp"
#include "bayesmesh/sample.hpp"

namespace bayesmesh {

enum class Scheme { LogLikelihood, Regularized, Bayesian };
enum class Optimizer { PlainSGD, Adam };

/// Starting point of the MAP phases / posterior means.
///   Auto:      Uniform for LogLikelihood, PriorMean otherwise.
///   PriorMean: the prior mean (the measured offsets).
///   Uniform:   i.i.d. uniform on [0, 2pi), independent of the device.
enum class PhaseInit { Auto, PriorMean, Uniform };

std::string to_string(Scheme s);
std::string to_string(Optimizer o);
/// Accepts "loglik"/"log_likelihood", "reg"/"regularized", "bayes"/"bayesian".
Scheme parse_scheme(const std::string& name);
Optimizer parse_optimizer(const std::string& name);
std::string to_string(PhaseInit p);
PhaseInit parse_phase_init(const std::string& name);

inline constexpr double kDefaultMapLearningRate = 0.01;
inline constexpr double kDefaultBayesLearningRate = 0.005;
inline constexpr double kDefaultInitSigma = 0.05;

struct TrainingConfig {
  Scheme scheme = Scheme::LogLikelihood;
  double learning_rate = kDefaultMapLearningRate;
  std::size_t epochs = 25;
  std::size_t batch_size = 50;
  std::uint64_t seed = 1;
  Optimizer optimizer = Optimizer::PlainSGD;
  /// Per-step weight of the prior and entropy terms relative to the mean
  /// batch cross-entropy is prior_scale / N_d: with a summed batch loss this
  /// is the usual batch_size / N_d share, so an epoch adds up to the
  /// full-dataset objective.
  double prior_scale = 1.0;
  PhaseInit init = PhaseInit::Auto;
  /// Posterior deviation at initialization (Bayesian scheme).
  double init_sigma = kDefaultInitSigma;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  /// Throws ConfigError for non-positive rates, batch sizes or epochs.
  void validate() const;
  /// Learning rate default for the scheme.
  static double default_learning_rate(Scheme s);
};

nlohmann::json config_to_json(const TrainingConfig& c);
/// Missing keys keep their defaults; unknown scheme names throw ConfigError.
TrainingConfig config_from_json(const nlohmann::json& doc);

struct EpochRecord {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double train_accuracy = 0.0;
  double wall_ms = 0.0;
};

/// CSV with header epoch,mean_loss,train_accuracy,wall_ms.
void write_training_log(const std::filesystem::path& path, std::span<const EpochRecord> log);

double softplus(double x);
double softplus_inverse(double y);
double sigmoid(double x);

/// Factorized Gaussian q(phi) with sigma = softplus(rho).
struct VariationalPosterior {
  std::vector<double> mu;
  std::vector<double> rho;

  [[nodiscard]] std::size_t size() const { return mu.size(); }
  [[nodiscard]] double sigma(std::size_t i) const { return softplus(rho[i]); }
  [[nodiscard]] std::vector<double> sigmas() const;
};

/// phi = mu + softplus(rho) * eps, elementwise.
std::vector<double> sample_posterior(const VariationalPosterior& q, std::span<const double> eps);

/// ln q(phi) for the factorized Gaussian.
double log_q(std::span<const double> phi, const VariationalPosterior& q);

/// Per-step weight of the non-data terms: prior_scale / n_data.
double prior_term_weight(const TrainingConfig& config, std::size_t n_data);

/// Initial phases (or posterior means) for `config`; Uniform draws from a
/// stream derived from config.seed.
std::vector<double> initial_phases(const TrainingConfig& config, const GaussianPrior& prior);

/// Single-sample estimate mean CE(phi) + w * (L_R(phi) + ln q(phi)), on the
/// plain forward path.
double bayes_loss(const NetworkSpec& spec, std::span<const double> phi,
                  const VariationalPosterior& q, const GaussianPrior& prior,
                  std::span<const Sample> batch, double weight);

struct BayesGradient {
  double loss = 0.0;
  double data_loss = 0.0;
  std::size_t correct = 0;
  std::vector<double> d_mu;   // total derivative dL_B/dmu
  std::vector<double> d_rho;  // total derivative dL_B/drho
};

/// Draws phi = mu + sigma * eps and returns L_B with its total derivatives
/// w.r.t. (mu, rho), assembled from the partials and dL_B/dphi.
BayesGradient bayes_gradient(GradientEvaluator& evaluator, const VariationalPosterior& q,
                             const GaussianPrior& prior, std::span<const Sample> batch,
                             std::span<const double> eps, double weight);

/// First-order optimizer state over a flat parameter vector.
class ParameterUpdater {
 public:
  ParameterUpdater(const TrainingConfig& config, std::size_t n);
  void apply(std::span<double> params, std::span<const double> grad);

 private:
  Optimizer kind_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

/// Gradient descent on mean CE (+ weighted L_R for the Regularized scheme),
/// starting from initial_phases(). Phases are not wrapped while training.
class MapTrainer {
 public:
  MapTrainer(NetworkSpec spec, GaussianPrior prior, TrainingConfig config, std::size_t n_data);
  MapTrainer(const MapTrainer&) = delete;
  MapTrainer& operator=(const MapTrainer&) = delete;

  /// One update on `batch`; returns the loss before the update.
  const LossGrad& step(std::span<const Sample> batch);
  [[nodiscard]] std::span<const double> phases() const noexcept { return phases_; }
  [[nodiscard]] const LossSpec& loss_spec() const noexcept { return loss_; }

 private:
  NetworkSpec spec_;
  GaussianPrior prior_;
  TrainingConfig config_;
  LossSpec loss_;
  GradientEvaluator evaluator_;
  ParameterUpdater updater_;
  std::vector<double> phases_;
};

/// Variational Bayes: one posterior sample per step, updates on (mu, rho).
class BayesTrainer {
 public:
  BayesTrainer(NetworkSpec spec, GaussianPrior prior, TrainingConfig config, std::size_t n_data);

  /// One update with explicit noise eps (size N_phi).
  const BayesGradient& step(std::span<const Sample> batch, std::span<const double> eps);
  /// One update drawing eps from `rng`.
  const BayesGradient& step(std::span<const Sample> batch, Rng& rng);
  [[nodiscard]] const VariationalPosterior& posterior() const noexcept { return q_; }

 private:
  NetworkSpec spec_;
  GaussianPrior prior_;
  TrainingConfig config_;
  double weight_;
  GradientEvaluator evaluator_;
  ParameterUpdater mu_updater_;
  ParameterUpdater rho_updater_;
  VariationalPosterior q_;
  BayesGradient last_;
  std::vector<double> eps_buffer_;
};

struct MapResult {
  PhaseVector phases;          // wrapped onto [0, 2pi)
  std::vector<double> raw;     // unwrapped optimizer state
  std::vector<EpochRecord> log;
};

struct BayesResult {
  VariationalPosterior posterior;
  std::vector<EpochRecord> log;
};

/// Throws ConfigError for a Bayesian config and TrainingFailure (with the
/// epoch index) if the loss becomes non-finite.
MapResult train_map(const NetworkSpec& spec, std::span<const Sample> data,
                    const GaussianPrior& prior, const TrainingConfig& config);

BayesResult train_bayes(const NetworkSpec& spec, std::span<const Sample> data,
                        const GaussianPrior& prior, const TrainingConfig& config);

/// Checkpoint document: {spec, phase_vector | posterior, training_meta}.
struct Checkpoint {
  NetworkSpec spec;
  std::optional<PhaseVector> phases;
  std::optional<VariationalPosterior> posterior;
  TrainingConfig config;
  double sigma_p = 0.0;  // +inf for the flat prior
  std::uint64_t device_seed = 0;
};

nlohmann::json checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& doc);

}  // namespace bayesmesh
