#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bayesmesh/errors.hpp"
#include "bayesmesh/experiment.hpp"
#include "test_util.hpp"

using namespace bayesmesh;

namespace {

std::vector<Sample> labelled_fields(std::size_t count, std::uint64_t seed) {
  Rng rng(seed);
  auto out = testutil::random_samples(rng, count);
  for (auto& s : out) {
    s.features[s.label] += 1.5;
    double n2 = 0.0;
    for (auto z : s.features) n2 += std::norm(z);
    for (auto& z : s.features) z /= std::sqrt(n2);
  }
  return out;
}

ExperimentPlan tiny_plan() {
  ExperimentPlan p;
  p.kind = ExperimentKind::CrosstalkSweep;
  p.sigma_p = {0.1, 0.3};
  p.crosstalk = {0.0, 0.01};
  p.bits = {8};
  p.schemes = {Scheme::LogLikelihood, Scheme::Regularized, Scheme::Bayesian};
  p.n_devices = 2;
  p.n_thermal_trials = 2;
  p.seed = 4;
  p.training.epochs = 1;
  p.training.batch_size = 50;
  return p;
}

}  // namespace

TEST_CASE("plan json round trip and validation") {
  auto p = tiny_plan();
  p.device_seeds = {11, 12};
  p.convention = DriveConvention::HeaterOnly;
  p.bayes_rule = BayesDriveRule::Literal;
  p.dataset_fraction = 0.5;
  auto doc = nlohmann::json::parse(plan_to_json(p).dump());
  auto back = plan_from_json(doc);
  CHECK(plan_to_json(back) == plan_to_json(p));
  CHECK(plan_hash(back) == plan_hash(p));
  CHECK(plan_from_json(nlohmann::json{{"plan", doc}}).sigma_p == p.sigma_p);
  CHECK(back.resolved_device_seeds() == std::vector<std::uint64_t>{11, 12});
  CHECK(to_string(parse_experiment_kind("bayes_analysis")) == "bayes_analysis");

  CHECK(p.grid_size() == 2 * 2 * 1 * 3);
  auto grid = p.grid();
  REQUIRE(grid.size() == 12);
  CHECK(grid[0].scheme == Scheme::LogLikelihood);
  CHECK(grid[1].scheme == Scheme::Regularized);
  CHECK(grid[3].crosstalk == 0.01);
  CHECK(grid[6].sigma_p == 0.3);

  auto empty = p;
  empty.sigma_p.clear();
  CHECK_THROWS_AS(empty.validate(), ConfigError);
  auto no_dev = p;
  no_dev.n_devices = 0;
  no_dev.device_seeds.clear();
  CHECK_THROWS_AS(no_dev.validate(), ConfigError);
  auto bad_bits = p;
  bad_bits.bits = {0};
  CHECK_THROWS_AS(bad_bits.validate(), ConfigError);
  auto analysis = p;
  analysis.kind = ExperimentKind::BayesAnalysis;
  analysis.schemes = {Scheme::Regularized};
  CHECK_THROWS_AS(analysis.validate(), ConfigError);
  CHECK_THROWS_AS(plan_from_json(nlohmann::json::parse(R"({"kind":"nope"})")), ConfigError);

  auto seeds = tiny_plan().resolved_device_seeds();
  CHECK(seeds.size() == 2);
  CHECK(seeds[0] != seeds[1]);

  auto tc = p.trial_config(Scheme::Bayesian, 11);
  CHECK(tc.scheme == Scheme::Bayesian);
  CHECK(tc.learning_rate == p.bayes_learning_rate);
  CHECK(p.trial_config(Scheme::Regularized, 11).learning_rate == p.map_learning_rate);
  CHECK(p.trial_config(Scheme::Regularized, 11).seed != p.trial_config(Scheme::Regularized, 12).seed);
}

TEST_CASE("sigma histogram and accuracy reduction") {
  std::vector<double> s{0.0, 0.004, 0.006, 0.0149, 0.05, 0.051};
  auto h = sigma_histogram(s);
  REQUIRE(h.size() >= 6);
  CHECK(h[0] == 2.0);
  CHECK(h[1] == 2.0);
  CHECK(h[5] == 2.0);
  double total = 0.0;
  for (double v : h) total += v;
  CHECK(total == 6.0);

  std::vector<double> acc{0.8, 0.7, 0.95, 0.81, 0.6};
  auto r = reduce_accuracies(acc);
  CHECK(r.mean == doctest::Approx(0.772));
  double var = 0.0;
  for (double a : acc) var += (a - 0.772) * (a - 0.772);
  CHECK(r.std == doctest::Approx(std::sqrt(var / 4.0)));
  auto perm = acc;
  std::reverse(perm.begin(), perm.end());
  std::rotate(perm.begin(), perm.begin() + 2, perm.end());
  auto r2 = reduce_accuracies(perm);
  CHECK(r2.mean == r.mean);
  CHECK(r2.std == r.std);
  std::vector<double> one{0.5};
  CHECK(reduce_accuracies(one).std == 0.0);
}

TEST_CASE("experiment runs reproducibly") {
  const auto train = labelled_fields(200, 1);
  const auto test = labelled_fields(100, 2);
  const auto plan = tiny_plan();

  ModelStore store;
  ExperimentOptions opts;
  opts.workers = 1;
  opts.store = &store;
  auto a = run_experiment(plan, train, test, opts);
  CHECK(store.size() == 2 * (1 + 2 + 2));

  ExperimentOptions fresh;
  fresh.workers = 3;
  auto b = run_experiment(plan, train, test, fresh);
  const auto csv = report_to_csv(a);
  CHECK(csv == report_to_csv(b));

  // Re-run from the serialized manifest.
  auto replay_plan = plan_from_json(nlohmann::json::parse(report_to_json(a).dump()));
  auto c = run_experiment(replay_plan, train, test);
  CHECK(report_to_csv(c) == csv);

  std::istringstream lines(csv);
  std::string header;
  std::getline(lines, header);
  CHECK(header ==
        "scheme,sigma_p,crosstalk,bits,mean_accuracy,accuracy_std,L_norm_rad,power_mW,"
        "n_deactivated_mean,runtime_s");
  std::size_t n_rows = 0;
  for (std::string line; std::getline(lines, line);) {
    ++n_rows;
    CHECK(line.substr(line.rfind(',') + 1) == "NA");
  }
  CHECK(n_rows == a.rows.size());
  REQUIRE(a.rows.size() == 12);

  for (const auto& row : a.rows) {
    CHECK(row.n_failures == 0);
    CHECK(row.mean_accuracy >= 0.0);
    CHECK(row.mean_accuracy <= 1.0);
    CHECK(row.power_mw == doctest::Approx(row.l_norm * kMilliwattPerRadian));
    const std::size_t trials = row.point.crosstalk == 0.0 ? 1 : plan.n_thermal_trials;
    CHECK(row.n_evaluations == plan.n_devices * trials);
    if (row.point.crosstalk == 0.0) CHECK(row.accuracy_std >= 0.0);
  }
  // The log-likelihood baseline does not depend on sigma_p.
  for (std::size_t r = 0; r < 6; ++r) {
    if (a.rows[r].point.scheme != Scheme::LogLikelihood) continue;
    CHECK(a.rows[r].mean_accuracy == a.rows[r + 6].mean_accuracy);
    CHECK(a.rows[r].l_norm == a.rows[r + 6].l_norm);
  }

  auto back = report_from_json(nlohmann::json::parse(report_to_json(a).dump()));
  CHECK(back.rows == a.rows);
  CHECK(back.device_seeds == a.device_seeds);
  CHECK(back.config_hash == a.config_hash);
}

TEST_CASE("bayes analysis keeps posteriors and writes the histogram") {
  const auto train = labelled_fields(100, 3);
  const auto test = labelled_fields(50, 4);
  ExperimentPlan p;
  p.kind = ExperimentKind::BayesAnalysis;
  p.schemes = {Scheme::Bayesian};
  p.sigma_p = {0.1};
  p.bits = {8, 16};
  p.n_devices = 1;
  p.training.epochs = 1;
  auto report = run_experiment(p, train, test);
  REQUIRE(report.posteriors.size() == 1);
  CHECK(report.posteriors[0].sigmas.size() == p.network.n_phases());
  REQUIRE(report.rows.size() == 2);
  double total = 0.0;
  for (double v : report.rows[0].sigma_histogram) total += v;
  CHECK(total == doctest::Approx(512.0));

  const auto dir = std::filesystem::temp_directory_path() / "bayesmesh_report_test";
  std::filesystem::remove_all(dir);
  emit_report(report, dir);
  CHECK(std::filesystem::exists(dir / "report.csv"));
  CHECK(std::filesystem::exists(dir / "report.json"));
  CHECK(std::filesystem::exists(dir / "histogram.csv"));
  std::filesystem::remove_all(dir);
}
