#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "bayesmesh/errors.hpp"
#include "bayesmesh/gradients.hpp"
#include "bayesmesh/prior.hpp"
#include "bayesmesh/training.hpp"
#include "test_util.hpp"

using namespace bayesmesh;

namespace {

// Ten classes, each a noisy field concentrated on its own port.
std::vector<Sample> toy_dataset(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Sample> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto& s = out[i];
    s.label = i % 10;
    s.features = testutil::random_field(rng, 16, false);
    for (auto& z : s.features) z *= 0.15;
    s.features[s.label] += 1.0;
    double n2 = 0.0;
    for (auto z : s.features) n2 += std::norm(z);
    for (auto& z : s.features) z /= std::sqrt(n2);
  }
  return out;
}

}  // namespace

TEST_CASE("softplus family") {
  CHECK(softplus(0.0) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(softplus(-10.0) == doctest::Approx(4.54e-5).epsilon(1e-3));
  CHECK(softplus(800.0) == 800.0);
  for (double y : {1e-6, 0.05, 0.693, 2.0, 30.0}) {
    CHECK(softplus(softplus_inverse(y)) == doctest::Approx(y).epsilon(1e-12));
  }
  CHECK_THROWS_AS(softplus_inverse(0.0), InvalidArgument);
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(-800.0) >= 0.0);
  CHECK(sigmoid(40.0) == doctest::Approx(1.0));
}

TEST_CASE("posterior sampling and log density") {
  VariationalPosterior q{{0.3, 1.2}, {0.0, -10.0}};
  std::vector<double> zero(2, 0.0);
  CHECK(sample_posterior(q, zero) == q.mu);
  CHECK(q.sigma(0) == doctest::Approx(std::log(2.0)));
  CHECK(q.sigma(1) == doctest::Approx(4.54e-5).epsilon(1e-3));
  VariationalPosterior one{{0.4}, {softplus_inverse(1.0)}};
  std::vector<double> at{0.4};
  CHECK(log_q(at, one) == doctest::Approx(-0.918939).epsilon(1e-6));
}

TEST_CASE("regularization term") {
  GaussianPrior prior{{1.0, 2.0}, 0.1};
  std::vector<double> same{1.0, 2.0};
  CHECK(regularization_term(same, prior) == 0.0);
  std::vector<double> off{1.1, 2.0};
  CHECK(regularization_term(off, prior) == doctest::Approx(0.5).epsilon(1e-12));
  GaussianPrior flat{{1.0, 2.0}};
  CHECK(flat.is_flat());
  CHECK(regularization_term(off, flat) == 0.0);
  GaussianPrior bad{{0.0}, -1.0};
  CHECK_THROWS_AS(validate(bad), InvalidArgument);
}

TEST_CASE("prior pull with the data term switched off") {
  Rng rng(31);
  GaussianPrior prior{testutil::random_phases(rng, 64), 0.2};
  auto phi = testutil::random_phases(rng, 64);
  std::vector<double> grad(64);
  double prev = std::numeric_limits<double>::infinity();
  for (int step = 0; step < 40; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    add_regularization_gradient(phi, prior, 1.0, grad);
    for (std::size_t i = 0; i < phi.size(); ++i) phi[i] -= 0.01 * grad[i];
    double dist = 0.0;
    for (std::size_t i = 0; i < phi.size(); ++i) dist += std::pow(phi[i] - prior.mean[i], 2);
    CHECK(std::sqrt(dist) < prev);
    prev = std::sqrt(dist);
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("prior term weight") {
  TrainingConfig c;
  CHECK(prior_term_weight(c, 60000) == doctest::Approx(1.0 / 60000.0));
  c.prior_scale = 3.0;
  CHECK(prior_term_weight(c, 300) == doctest::Approx(0.01));
  CHECK_THROWS_AS(prior_term_weight(c, 0), InvalidArgument);
}

TEST_CASE("initial phases") {
  Rng rng(1);
  GaussianPrior prior{testutil::random_phases(rng, 512), 0.1};
  TrainingConfig c;
  c.scheme = Scheme::Regularized;
  CHECK(initial_phases(c, prior) == prior.mean);
  c.scheme = Scheme::LogLikelihood;
  auto u1 = initial_phases(c, prior);
  CHECK(u1 != prior.mean);
  CHECK(u1 == initial_phases(c, prior));
  for (double v : u1) {
    CHECK(v >= 0.0);
    CHECK(v < testutil::kTwoPi);
  }
  c.init = PhaseInit::PriorMean;
  CHECK(initial_phases(c, prior) == prior.mean);
}

TEST_CASE("huge prior width reproduces the log-likelihood trajectory") {
  NetworkSpec spec;
  auto data = toy_dataset(500, 3);
  Rng rng(17);
  auto offsets = testutil::random_phases(rng, spec.n_phases());
  for (PhaseInit init : {PhaseInit::PriorMean, PhaseInit::Uniform}) {
    TrainingConfig base;
    base.seed = 99;
    base.init = init;
    base.scheme = Scheme::LogLikelihood;
    TrainingConfig reg = base;
    reg.scheme = Scheme::Regularized;
    MapTrainer a(spec, GaussianPrior{offsets}, base, data.size());
    MapTrainer b(spec, GaussianPrior{offsets, 1e6}, reg, data.size());
    double worst = 0.0, worst_grad = 0.0;
    for (std::size_t step = 0; step < 10; ++step) {
      std::span<const Sample> batch(data.data() + step * 50, 50);
      const auto ga = a.step(batch).grad;
      const auto gb = b.step(batch).grad;
      for (std::size_t i = 0; i < ga.size(); ++i) {
        worst_grad = std::max(worst_grad, std::abs(ga[i] - gb[i]) / (std::abs(ga[i]) + 1e-6));
      }
      for (std::size_t i = 0; i < spec.n_phases(); ++i) {
        worst = std::max(worst, std::abs(a.phases()[i] - b.phases()[i]));
      }
    }
    CHECK(worst <= 1e-6);
    CHECK(worst_grad <= 1e-6);
  }
}

TEST_CASE("map training lowers the loss") {
  NetworkSpec spec;
  auto data = toy_dataset(1000, 5);
  Rng rng(2);
  GaussianPrior prior{testutil::random_phases(rng, spec.n_phases()), 0.5};
  TrainingConfig c;
  c.scheme = Scheme::Regularized;
  c.epochs = 4;
  c.seed = 8;
  auto r = train_map(spec, data, prior, c);
  REQUIRE(r.log.size() == 4);
  CHECK(r.log.back().mean_loss < r.log.front().mean_loss);
  CHECK(r.phases.size() == spec.n_phases());
  for (std::size_t i = 0; i < r.raw.size(); ++i) CHECK(r.phases[i] == doctest::Approx(wrap_phase(r.raw[i])));

  auto again = train_map(spec, data, prior, c);
  CHECK(again.raw == r.raw);

  c.scheme = Scheme::Bayesian;
  CHECK_THROWS_AS(train_map(spec, data, prior, c), ConfigError);
}

TEST_CASE("bayes gradient matches finite differences on (mu, rho)") {
  NetworkSpec spec;
  Rng rng(41);
  auto batch = testutil::random_samples(rng, 2);
  GaussianPrior prior{testutil::random_phases(rng, spec.n_phases()), 0.1};
  VariationalPosterior q;
  q.mu = testutil::random_phases(rng, spec.n_phases());
  for (std::size_t i = 0; i < spec.n_phases(); ++i) q.rho.push_back(rng.uniform(-4.0, 0.5));
  std::vector<double> eps(spec.n_phases());
  for (auto& e : eps) e = rng.normal();
  const double w = 0.05;

  GradientEvaluator ev(spec);
  auto g = bayes_gradient(ev, q, prior, batch, eps, w);
  CHECK(g.loss == doctest::Approx(bayes_loss(spec, sample_posterior(q, eps), q, prior, batch, w)).epsilon(1e-12));

  const std::size_t n = spec.n_phases();
  std::vector<double> theta(q.mu);
  theta.insert(theta.end(), q.rho.begin(), q.rho.end());
  auto f = [&](std::span<const double> t) {
    VariationalPosterior p;
    p.mu.assign(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(n));
    p.rho.assign(t.begin() + static_cast<std::ptrdiff_t>(n), t.end());
    return bayes_loss(spec, sample_posterior(p, eps), p, prior, batch, w);
  };
  auto fd = central_difference(f, theta, 1e-5);
  int bad = 0;
  for (std::size_t i = 0; i < n; ++i) {
    auto close = [](double a, double b) {
      const double d = std::abs(a - b);
      return d <= 1e-8 || d <= 1e-4 * std::max(std::abs(a), std::abs(b));
    };
    bad += close(g.d_mu[i], fd[i]) ? 0 : 1;
    bad += close(g.d_rho[i], fd[n + i]) ? 0 : 1;
  }
  CHECK(bad == 0);
}

TEST_CASE("degenerate posterior reduces to the cross-entropy gradient") {
  NetworkSpec spec;
  Rng rng(43);
  auto batch = testutil::random_samples(rng, 3);
  GaussianPrior flat{testutil::random_phases(rng, spec.n_phases())};
  VariationalPosterior q{testutil::random_phases(rng, spec.n_phases()),
                         std::vector<double>(spec.n_phases(), -40.0)};
  std::vector<double> eps(spec.n_phases());
  for (auto& e : eps) e = rng.normal();
  GradientEvaluator ev(spec);
  auto g = bayes_gradient(ev, q, flat, batch, eps, 1.0);
  auto ce = loss_and_grad(spec, q.mu, batch, LossSpec{});
  for (std::size_t i = 0; i < spec.n_phases(); ++i) CHECK(std::abs(g.d_mu[i] - ce.grad[i]) <= 1e-8);
}

TEST_CASE("monte carlo bayes loss matches the analytic expectation") {
  // N = 2, one layer, two classes: four phases, only phase 1 is uncertain.
  NetworkSpec spec;
  spec.ports = 2;
  spec.layers = 1;
  spec.nonlinearities = {Nonlinearity::ModulusSquared};
  spec.classes = 2;
  spec.input_power = 4.0;
  Sample s;
  s.features = {std::complex<double>(0.6, 0.0), std::complex<double>(0.0, 0.8)};
  s.label = 0;
  std::vector<Sample> batch{s};

  const double w = 0.5;
  GaussianPrior prior{{0.1, 1.0, -0.4, 0.2}, 0.7};
  VariationalPosterior q{{0.3, 1.6, -0.2, 0.5}, {-30.0, softplus_inverse(0.5), -30.0, -30.0}};

  // Expected cross-entropy over phase 1 by quadrature.
  const double sigma = q.sigma(1);
  double e_ce = 0.0, norm = 0.0;
  const int m = 20001;
  for (int k = 0; k < m; ++k) {
    const double z = -9.0 + 18.0 * k / (m - 1);
    const double dens = std::exp(-0.5 * z * z);
    auto phi = q.mu;
    phi[1] += sigma * z;
    e_ce += dens * evaluate_loss(spec, phi, batch, LossSpec{});
    norm += dens;
  }
  e_ce /= norm;
  // E[L_R] = sum ((mu - mu_p)^2 + sigma^2) / (2 sigma_p^2); E[ln q] = sum -ln sigma - 1/2 - ln(2 pi)/2
  double e_lr = 0.0, e_lnq = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    const double si = q.sigma(i);
    e_lr += (std::pow(q.mu[i] - prior.mean[i], 2) + si * si) / (2.0 * 0.49);
    e_lnq += -std::log(si) - 0.5 - 0.5 * std::log(2.0 * std::numbers::pi);
  }
  const double analytic = e_ce + w * (e_lr + e_lnq);

  Rng rng(123);
  const int draws = 10000;
  double sum = 0.0, sum2 = 0.0;
  std::vector<double> eps(4);
  for (int d = 0; d < draws; ++d) {
    for (auto& e : eps) e = rng.normal();
    const double v = bayes_loss(spec, sample_posterior(q, eps), q, prior, batch, w);
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / draws;
  const double se = std::sqrt((sum2 / draws - mean * mean) / draws);
  CHECK(std::abs(mean - analytic) <= 3.0 * se);
}

TEST_CASE("bayes training is deterministic and keeps sigma positive") {
  NetworkSpec spec;
  auto data = toy_dataset(300, 6);
  Rng rng(12);
  GaussianPrior prior{testutil::random_phases(rng, spec.n_phases()), 0.1};
  TrainingConfig c;
  c.scheme = Scheme::Bayesian;
  c.learning_rate = 0.05;
  c.epochs = 2;
  c.seed = 21;
  auto a = train_bayes(spec, data, prior, c);
  auto b = train_bayes(spec, data, prior, c);
  CHECK(a.posterior.mu == b.posterior.mu);
  CHECK(a.posterior.rho == b.posterior.rho);
  for (double s : a.posterior.sigmas()) CHECK(s > 0.0);

  BayesTrainer t1(spec, prior, c, data.size());
  BayesTrainer t2(spec, prior, c, data.size());
  CHECK(t1.posterior().sigma(0) == doctest::Approx(kDefaultInitSigma));
  CHECK(t1.posterior().mu == prior.mean);
  Rng e1(5), e2(5);
  for (int step = 0; step < 3; ++step) {
    std::span<const Sample> batch(data.data() + step * 50, 50);
    t1.step(batch, e1);
    t2.step(batch, e2);
  }
  CHECK(t1.posterior().mu == t2.posterior().mu);
  CHECK(t1.posterior().rho == t2.posterior().rho);
}

TEST_CASE("non-finite inputs surface as a training failure with the epoch") {
  NetworkSpec spec;
  auto data = toy_dataset(100, 7);
  data[60].features[3] = std::complex<double>(std::nan(""), 0.0);
  Rng rng(13);
  GaussianPrior prior{testutil::random_phases(rng, spec.n_phases()), 0.1};
  TrainingConfig c;
  c.scheme = Scheme::Regularized;
  c.epochs = 2;
  try {
    (void)train_map(spec, data, prior, c);
    FAIL("expected TrainingFailure");
  } catch (const TrainingFailure& e) {
    CHECK(e.epoch() == 0);
  }
}

TEST_CASE("config validation and json") {
  TrainingConfig c;
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainingConfig{};
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainingConfig{};
  c.scheme = Scheme::Bayesian;
  c.optimizer = Optimizer::Adam;
  c.learning_rate = 0.002;
  c.seed = 1234567890123ULL;
  c.init = PhaseInit::Uniform;
  auto back = config_from_json(nlohmann::json::parse(config_to_json(c).dump()));
  CHECK(back.scheme == c.scheme);
  CHECK(back.optimizer == c.optimizer);
  CHECK(back.learning_rate == c.learning_rate);
  CHECK(back.seed == c.seed);
  CHECK(back.init == c.init);
  CHECK(parse_scheme("reg") == Scheme::Regularized);
  CHECK(parse_scheme("bayesian") == Scheme::Bayesian);
  CHECK_THROWS_AS(parse_scheme("mle"), ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"scheme":"x"})")), ConfigError);
  CHECK(TrainingConfig::default_learning_rate(Scheme::Regularized) == kDefaultMapLearningRate);
  CHECK(TrainingConfig::default_learning_rate(Scheme::Bayesian) == kDefaultBayesLearningRate);
}

TEST_CASE("checkpoint round trip") {
  Rng rng(14);
  Checkpoint ck;
  ck.phases = PhaseVector(testutil::random_phases(rng, 512));
  ck.sigma_p = std::numeric_limits<double>::infinity();
  ck.device_seed = 77;
  auto doc = nlohmann::json::parse(checkpoint_to_json(ck).dump());
  auto back = checkpoint_from_json(doc);
  CHECK(back.phases.has_value());
  CHECK(*back.phases == *ck.phases);
  CHECK(std::isinf(back.sigma_p));
  CHECK(back.device_seed == 77);

  Checkpoint bk;
  bk.posterior = VariationalPosterior{testutil::random_phases(rng, 512), std::vector<double>(512, -2.5)};
  bk.sigma_p = 0.1;
  bk.config.scheme = Scheme::Bayesian;
  auto bback = checkpoint_from_json(nlohmann::json::parse(checkpoint_to_json(bk).dump()));
  REQUIRE(bback.posterior.has_value());
  CHECK(bback.posterior->mu == bk.posterior->mu);
  CHECK(bback.posterior->rho == bk.posterior->rho);
  CHECK(bback.sigma_p == 0.1);
  CHECK_THROWS_AS(checkpoint_from_json(nlohmann::json::parse("{}")), ConfigError);
}

TEST_CASE("training log csv") {
  const auto path = std::filesystem::temp_directory_path() / "bayesmesh_log_test.csv";
  std::vector<EpochRecord> log{{0, 1.5, 0.25, 10.0}, {1, 1.25, 0.5, 11.0}};
  write_training_log(path, log);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,mean_loss,train_accuracy,wall_ms");
  int lines = 0;
  for (std::string line; std::getline(in, line);) ++lines;
  CHECK(lines == 2);
  std::filesystem::remove(path);
}
