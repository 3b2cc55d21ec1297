#include "bayesmesh/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <nlohmann/json.hpp>

#include "bayesmesh/data.hpp"
#include "bayesmesh/errors.hpp"

namespace bayesmesh {

std::string to_string(Scheme s) {
  switch (s) {
    case Scheme::LogLikelihood: return "loglik";
    case Scheme::Regularized: return "reg";
    case Scheme::Bayesian: return "bayes";
  }
  return "unknown";
}

std::string to_string(Optimizer o) { return o == Optimizer::Adam ? "adam" : "sgd"; }

Scheme parse_scheme(const std::string& name) {
  if (name == "loglik" || name == "log_likelihood") return Scheme::LogLikelihood;
  if (name == "reg" || name == "regularized") return Scheme::Regularized;
  if (name == "bayes" || name == "bayesian") return Scheme::Bayesian;
  throw ConfigError("unknown training scheme '" + name + "'");
}

Optimizer parse_optimizer(const std::string& name) {
  if (name == "sgd") return Optimizer::PlainSGD;
  if (name == "adam") return Optimizer::Adam;
  throw ConfigError("unknown optimizer '" + name + "'");
}

std::string to_string(PhaseInit p) {
  switch (p) {
    case PhaseInit::Auto: return "auto";
    case PhaseInit::PriorMean: return "prior_mean";
    case PhaseInit::Uniform: return "uniform";
  }
  return "unknown";
}

PhaseInit parse_phase_init(const std::string& name) {
  if (name == "auto") return PhaseInit::Auto;
  if (name == "prior_mean") return PhaseInit::PriorMean;
  if (name == "uniform") return PhaseInit::Uniform;
  throw ConfigError("unknown phase init '" + name + "'");
}

void TrainingConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("learning rate must be positive");
  }
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (!(prior_scale >= 0.0)) throw ConfigError("prior_scale must be non-negative");
  if (!(init_sigma > 0.0)) throw ConfigError("init_sigma must be positive");
}

double TrainingConfig::default_learning_rate(Scheme s) {
  return s == Scheme::Bayesian ? kDefaultBayesLearningRate : kDefaultMapLearningRate;
}

nlohmann::json config_to_json(const TrainingConfig& c) {
  return {{"scheme", to_string(c.scheme)},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"optimizer", to_string(c.optimizer)},
          {"prior_scale", c.prior_scale},
          {"init_sigma", c.init_sigma},
          {"init", to_string(c.init)}};
}

TrainingConfig config_from_json(const nlohmann::json& doc) {
  try {
    TrainingConfig c;
    if (doc.contains("scheme")) c.scheme = parse_scheme(doc.at("scheme").get<std::string>());
    c.learning_rate = doc.value("learning_rate", TrainingConfig::default_learning_rate(c.scheme));
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.seed = doc.value("seed", c.seed);
    if (doc.contains("optimizer")) c.optimizer = parse_optimizer(doc.at("optimizer").get<std::string>());
    c.prior_scale = doc.value("prior_scale", c.prior_scale);
    c.init_sigma = doc.value("init_sigma", c.init_sigma);
    if (doc.contains("init")) c.init = parse_phase_init(doc.at("init").get<std::string>());
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed training config: ") + e.what());
  }
}

void write_training_log(const std::filesystem::path& path, std::span<const EpochRecord> log) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,mean_loss,train_accuracy,wall_ms\n";
  out.precision(17);
  for (const auto& r : log) {
    out << r.epoch << ',' << r.mean_loss << ',' << r.train_accuracy << ',' << r.wall_ms << '\n';
  }
}

double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double softplus_inverse(double y) {
  if (!(y > 0.0)) throw InvalidArgument("softplus_inverse: argument must be positive");
  return y + std::log(-std::expm1(-y));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

std::vector<double> VariationalPosterior::sigmas() const {
  std::vector<double> s(rho.size());
  for (std::size_t i = 0; i < rho.size(); ++i) s[i] = softplus(rho[i]);
  return s;
}

std::vector<double> sample_posterior(const VariationalPosterior& q, std::span<const double> eps) {
  if (eps.size() != q.mu.size() || q.rho.size() != q.mu.size()) {
    throw ShapeError("sample_posterior: size mismatch");
  }
  std::vector<double> phi(q.mu.size());
  for (std::size_t i = 0; i < phi.size(); ++i) phi[i] = q.mu[i] + softplus(q.rho[i]) * eps[i];
  return phi;
}

double log_q(std::span<const double> phi, const VariationalPosterior& q) {
  if (phi.size() != q.mu.size()) throw ShapeError("log_q: size mismatch");
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  double s = 0.0;
  for (std::size_t i = 0; i < phi.size(); ++i) {
    const double sigma = softplus(q.rho[i]);
    const double z = (phi[i] - q.mu[i]) / sigma;
    s += -half_log_2pi - std::log(sigma) - 0.5 * z * z;
  }
  return s;
}

double prior_term_weight(const TrainingConfig& config, std::size_t n_data) {
  if (n_data == 0) throw InvalidArgument("prior_term_weight: empty dataset");
  return config.prior_scale / static_cast<double>(n_data);
}

std::vector<double> initial_phases(const TrainingConfig& config, const GaussianPrior& prior) {
  PhaseInit init = config.init;
  if (init == PhaseInit::Auto) {
    init = config.scheme == Scheme::LogLikelihood ? PhaseInit::Uniform : PhaseInit::PriorMean;
  }
  if (init == PhaseInit::PriorMean) return prior.mean;
  std::vector<double> phases(prior.mean.size());
  Rng rng(derive_seed(config.seed, 0x494e4954ULL));
  for (double& v : phases) v = 2.0 * std::numbers::pi * rng.uniform();
  return phases;
}

double bayes_loss(const NetworkSpec& spec, std::span<const double> phi,
                  const VariationalPosterior& q, const GaussianPrior& prior,
                  std::span<const Sample> batch, double weight) {
  const LossSpec loss{1.0, &prior, weight};
  return evaluate_loss(spec, phi, batch, loss) + weight * log_q(phi, q);
}

BayesGradient bayes_gradient(GradientEvaluator& evaluator, const VariationalPosterior& q,
                             const GaussianPrior& prior, std::span<const Sample> batch,
                             std::span<const double> eps, double weight) {
  const std::size_t n = q.size();
  if (eps.size() != n) throw ShapeError("bayes_gradient: eps size mismatch");
  // Steps 1-3: sigma = softplus(rho), phi = mu + sigma * eps.
  std::vector<double> sigma(n);
  std::vector<double> phi(n);
  for (std::size_t i = 0; i < n; ++i) {
    sigma[i] = softplus(q.rho[i]);
    phi[i] = q.mu[i] + sigma[i] * eps[i];
  }
  // Step 4: L_B = CE(phi) + w L_R(phi) + w ln q(phi).
  const LossGrad& lg = evaluator.evaluate(phi, batch, LossSpec{1.0, &prior, weight});
  BayesGradient out;
  out.loss = lg.loss + weight * log_q(phi, q);
  out.data_loss = lg.data_loss;
  out.correct = lg.correct;
  out.d_mu.resize(n);
  out.d_rho.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Partials of w ln q at fixed phi: d/dphi = -w eps/sigma, d/dmu = +w eps/sigma,
    // d/dsigma = w (eps^2 - 1)/sigma. Steps 5-6 then combine with dL/dphi; the
    // eps/sigma pieces cancel exactly and are dropped so that tiny sigma stays
    // well conditioned.
    const double g = lg.grad[i];
    const double dsigma_drho = sigmoid(q.rho[i]);
    out.d_mu[i] = g;
    out.d_rho[i] = dsigma_drho * eps[i] * g - weight * (dsigma_drho / sigma[i]);
  }
  return out;
}

ParameterUpdater::ParameterUpdater(const TrainingConfig& config, std::size_t n)
    : kind_(config.optimizer),
      lr_(config.learning_rate),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      eps_(config.adam_epsilon) {
  if (kind_ == Optimizer::Adam) {
    m_.assign(n, 0.0);
    v_.assign(n, 0.0);
  }
}

void ParameterUpdater::apply(std::span<double> params, std::span<const double> grad) {
  if (params.size() != grad.size()) throw ShapeError("ParameterUpdater: size mismatch");
  if (kind_ == Optimizer::PlainSGD) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i] -= lr_ * grad[i];
    return;
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grad[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grad[i] * grad[i];
    params[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
  }
}

MapTrainer::MapTrainer(NetworkSpec spec, GaussianPrior prior, TrainingConfig config,
                       std::size_t n_data)
    : spec_(std::move(spec)),
      prior_(std::move(prior)),
      config_(config),
      evaluator_(spec_),
      updater_(config_, spec_.n_phases()),
      phases_(initial_phases(config_, prior_)) {
  config_.validate();
  validate(prior_);
  if (config_.scheme == Scheme::Bayesian) throw ConfigError("MapTrainer: Bayesian scheme requested");
  if (prior_.mean.size() != spec_.n_phases()) throw ShapeError("MapTrainer: prior size mismatch");
  if (config_.scheme == Scheme::Regularized) {
    if (prior_.is_flat()) throw ConfigError("regularized scheme needs a finite prior sigma");
    loss_ = LossSpec{1.0, &prior_, prior_term_weight(config_, n_data)};
  }
}

const LossGrad& MapTrainer::step(std::span<const Sample> batch) {
  const LossGrad& lg = evaluator_.evaluate(phases_, batch, loss_);
  updater_.apply(phases_, lg.grad);
  return lg;
}

BayesTrainer::BayesTrainer(NetworkSpec spec, GaussianPrior prior, TrainingConfig config,
                           std::size_t n_data)
    : spec_(std::move(spec)),
      prior_(std::move(prior)),
      config_(config),
      weight_(prior_term_weight(config, n_data)),
      evaluator_(spec_),
      mu_updater_(config_, spec_.n_phases()),
      rho_updater_(config_, spec_.n_phases()) {
  config_.validate();
  validate(prior_);
  if (config_.scheme != Scheme::Bayesian) throw ConfigError("BayesTrainer: non-Bayesian scheme");
  if (prior_.mean.size() != spec_.n_phases()) throw ShapeError("BayesTrainer: prior size mismatch");
  q_.mu = initial_phases(config_, prior_);
  q_.rho.assign(q_.mu.size(), softplus_inverse(config_.init_sigma));
  eps_buffer_.resize(q_.mu.size());
}

const BayesGradient& BayesTrainer::step(std::span<const Sample> batch,
                                        std::span<const double> eps) {
  last_ = bayes_gradient(evaluator_, q_, prior_, batch, eps, weight_);
  mu_updater_.apply(q_.mu, last_.d_mu);
  rho_updater_.apply(q_.rho, last_.d_rho);
  return last_;
}

const BayesGradient& BayesTrainer::step(std::span<const Sample> batch, Rng& rng) {
  for (double& e : eps_buffer_) e = rng.normal();
  return step(batch, eps_buffer_);
}

namespace {

// Drives one epoch loop; `do_step` returns (loss, correct) for a batch.
template <class StepFn>
std::vector<EpochRecord> run_epochs(std::span<const Sample> data, const TrainingConfig& config,
                                    StepFn&& do_step) {
  std::vector<EpochRecord> log;
  std::vector<Sample> batch;
  batch.reserve(config.batch_size);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto order = epoch_order(data.size(), config.seed, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.resize(end - start);
      for (std::size_t j = start; j < end; ++j) batch[j - start] = data[order[j]];
      double loss = 0.0;
      std::size_t hits = 0;
      try {
        std::tie(loss, hits) = do_step(std::span<const Sample>(batch));
      } catch (const NumericFailure& e) {
        throw TrainingFailure(std::string("training diverged: ") + e.what(), epoch);
      }
      if (!std::isfinite(loss)) {
        throw TrainingFailure("training diverged at epoch " + std::to_string(epoch), epoch);
      }
      loss_sum += loss * static_cast<double>(end - start);
      correct += hits;
    }
    const auto t1 = std::chrono::steady_clock::now();
    log.push_back({epoch, loss_sum / static_cast<double>(data.size()),
                   static_cast<double>(correct) / static_cast<double>(data.size()),
                   std::chrono::duration<double, std::milli>(t1 - t0).count()});
  }
  return log;
}

}  // namespace

MapResult train_map(const NetworkSpec& spec, std::span<const Sample> data,
                    const GaussianPrior& prior, const TrainingConfig& config) {
  if (data.empty()) throw InvalidArgument("train_map: empty dataset");
  if (config.scheme == Scheme::Bayesian) throw ConfigError("train_map: use train_bayes for the Bayesian scheme");
  MapTrainer trainer(spec, prior, config, data.size());
  MapResult result;
  result.log = run_epochs(data, config, [&](std::span<const Sample> batch) {
    const LossGrad& lg = trainer.step(batch);
    return std::pair{lg.loss, lg.correct};
  });
  for (double v : trainer.phases()) {
    if (!std::isfinite(v)) throw TrainingFailure("non-finite phase after training", config.epochs);
  }
  result.raw.assign(trainer.phases().begin(), trainer.phases().end());
  result.phases = PhaseVector(result.raw);
  return result;
}

BayesResult train_bayes(const NetworkSpec& spec, std::span<const Sample> data,
                        const GaussianPrior& prior, const TrainingConfig& config) {
  if (data.empty()) throw InvalidArgument("train_bayes: empty dataset");
  if (config.scheme != Scheme::Bayesian) throw ConfigError("train_bayes: scheme must be Bayesian");
  BayesTrainer trainer(spec, prior, config, data.size());
  Rng eps_rng(derive_seed(config.seed, 0x455053ULL));
  BayesResult result;
  result.log = run_epochs(data, config, [&](std::span<const Sample> batch) {
    const BayesGradient& g = trainer.step(batch, eps_rng);
    return std::pair{g.loss, g.correct};
  });
  result.posterior = trainer.posterior();
  for (std::size_t i = 0; i < result.posterior.size(); ++i) {
    if (!std::isfinite(result.posterior.mu[i]) || !std::isfinite(result.posterior.rho[i])) {
      throw TrainingFailure("non-finite posterior after training", config.epochs);
    }
  }
  return result;
}

nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  nlohmann::json doc;
  doc["spec"] = spec_to_json(c.spec);
  if (c.phases) doc["phase_vector"] = phases_to_json(*c.phases, c.spec.descriptor());
  if (c.posterior) doc["posterior"] = {{"mu", c.posterior->mu}, {"rho_sigma", c.posterior->rho}};
  auto meta = config_to_json(c.config);
  // JSON has no infinity; the flat prior is stored as null.
  meta["sigma_p"] = std::isinf(c.sigma_p) ? nlohmann::json(nullptr) : nlohmann::json(c.sigma_p);
  meta["device_seed"] = c.device_seed;
  doc["training_meta"] = meta;
  return doc;
}

Checkpoint checkpoint_from_json(const nlohmann::json& doc) {
  try {
    Checkpoint c;
    c.spec = spec_from_json(doc.at("spec"));
    if (doc.contains("phase_vector")) {
      auto [phases, layout] = phases_from_json(doc.at("phase_vector"));
      if (!(layout == c.spec.descriptor())) throw ConfigError("checkpoint layout does not match spec");
      c.phases = std::move(phases);
    }
    if (doc.contains("posterior")) {
      VariationalPosterior q;
      q.mu = doc.at("posterior").at("mu").get<std::vector<double>>();
      q.rho = doc.at("posterior").at("rho_sigma").get<std::vector<double>>();
      if (q.mu.size() != c.spec.n_phases() || q.rho.size() != q.mu.size()) {
        throw ConfigError("checkpoint posterior size does not match spec");
      }
      c.posterior = std::move(q);
    }
    if (!c.phases && !c.posterior) throw ConfigError("checkpoint holds neither phases nor posterior");
    const auto& meta = doc.at("training_meta");
    c.config = config_from_json(meta);
    c.sigma_p = meta.at("sigma_p").is_null() ? std::numeric_limits<double>::infinity()
                                             : meta.at("sigma_p").get<double>();
    c.device_seed = meta.value("device_seed", std::uint64_t{0});
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed checkpoint: ") + e.what());
  }
}

}  // namespace bayesmesh
