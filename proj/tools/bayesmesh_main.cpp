// bayesmesh: train, sweep, infer and feature-cache commands.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "bayesmesh/data.hpp"
#include "bayesmesh/errors.hpp"
#include "bayesmesh/experiment.hpp"
#include "bayesmesh/hardware.hpp"
#include "bayesmesh/network.hpp"
#include "bayesmesh/parallel.hpp"
#include "bayesmesh/training.hpp"

namespace fs = std::filesystem;
using namespace bayesmesh;
using nlohmann::json;

namespace {

enum ExitCode { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kTraining = 4 };

struct DataArgs {
  std::string mnist_dir;
  std::string cache;
};

std::string default_mnist_dir() {
  const char* env = std::getenv("BAYESMESH_MNIST_DIR");
  return env && *env ? env : "mnist";
}

fs::path test_cache_path(const fs::path& cache) { return fs::path(cache.string() + ".test"); }

DatasetSplit load_data(const DataArgs& args) {
  if (!args.cache.empty() && fs::exists(args.cache)) {
    DatasetSplit split;
    split.train = read_feature_cache(args.cache);
    split.test = read_feature_cache(test_cache_path(args.cache));
    split.checksums = {file_checksum(args.cache), file_checksum(test_cache_path(args.cache))};
    return split;
  }
  return load_mnist(args.mnist_dir, default_workers());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void add_data_options(CLI::App* cmd, DataArgs& args) {
  cmd->add_option("--mnist-dir", args.mnist_dir, "Directory with the MNIST IDX files (.gz accepted)")
      ->default_val(default_mnist_dir());
  cmd->add_option("--cache", args.cache, "Feature cache (train at FILE, test at FILE.test)");
}

struct TrainArgs {
  std::string scheme = "loglik";
  double sigma_p = 0.1;
  std::string config;
  std::uint64_t device_seed = 1;
  std::string out = "checkpoint.json";
  std::string log;
  double fraction = 1.0;
  DataArgs data;
};

int run_train(const TrainArgs& a) {
  NetworkSpec spec;
  TrainingConfig config;
  config.scheme = parse_scheme(a.scheme);
  config.learning_rate = TrainingConfig::default_learning_rate(config.scheme);
  if (!a.config.empty()) {
    const json doc = read_json(a.config);
    if (doc.contains("network")) spec = spec_from_json(doc.at("network"));
    json training = doc.contains("training") ? doc.at("training") : doc;
    if (!training.contains("learning_rate")) training["learning_rate"] = config.learning_rate;
    training["scheme"] = a.scheme;
    config = config_from_json(training);
  }
  config.validate();
  spec.validate();

  const auto split = load_data(a.data);
  const auto train = take_fraction(split.train, a.fraction);
  const auto test = split.test;
  const auto device = sample_device(spec.n_phases(), a.device_seed);
  const double sigma_p =
      config.scheme == Scheme::LogLikelihood ? std::numeric_limits<double>::infinity() : a.sigma_p;
  const GaussianPrior prior{device.measured, sigma_p};

  Checkpoint ck;
  ck.spec = spec;
  ck.config = config;
  ck.sigma_p = sigma_p;
  ck.device_seed = a.device_seed;
  std::vector<EpochRecord> log;
  std::vector<double> mean_phases;
  if (config.scheme == Scheme::Bayesian) {
    auto r = train_bayes(spec, train, prior, config);
    log = r.log;
    mean_phases = r.posterior.mu;
    ck.posterior = std::move(r.posterior);
  } else {
    auto r = train_map(spec, train, prior, config);
    log = r.log;
    mean_phases = r.raw;
    ck.phases = r.phases;
  }
  for (const auto& e : log) {
    std::printf("epoch %zu  loss %.5f  train_acc %.4f  %.0f ms\n", e.epoch, e.mean_loss,
                e.train_accuracy, e.wall_ms);
  }
  std::ofstream out(a.out);
  if (!out) throw IoError("cannot write " + a.out);
  out << checkpoint_to_json(ck).dump(2) << "\n";
  if (!a.log.empty()) write_training_log(a.log, log);
  std::vector<double> wrapped(mean_phases.size());
  for (std::size_t i = 0; i < wrapped.size(); ++i) wrapped[i] = wrap_phase(mean_phases[i]);
  std::printf("ideal test accuracy %.4f\n", evaluate_accuracy(spec, wrapped, test));
  return kOk;
}

struct SweepArgs {
  std::string plan;
  std::string out = "sweep";
  DataArgs data;
};

int run_sweep(const SweepArgs& a) {
  const auto plan = plan_from_json(read_json(a.plan));
  const auto split = load_data(a.data);
  ExperimentOptions opts;
  opts.data_checksums = split.checksums;
  opts.progress = [](const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); };
  const auto report = run_experiment(plan, split.train, split.test, opts);
  emit_report(report, a.out);
  std::cout << report_to_csv(report);
  std::size_t failures = 0;
  for (const auto& row : report.rows) failures += row.n_failures;
  if (failures > 0) std::fprintf(stderr, "%zu trial evaluations failed\n", failures);
  return kOk;
}

struct InferArgs {
  std::string checkpoint;
  std::uint64_t device_seed = 0;
  bool device_seed_set = false;
  double ct = 0.0;
  int bits = 8;
  double u = kDefaultSlack;
  std::uint64_t ct_seed = 1;
  std::string convention = "shortest";
  DataArgs data;
};

int run_infer(const InferArgs& a) {
  const auto ck = checkpoint_from_json(read_json(a.checkpoint));
  const std::uint64_t seed = a.device_seed_set ? a.device_seed : ck.device_seed;
  if (seed != ck.device_seed) {
    std::fprintf(stderr, "warning: checkpoint was trained against device seed %llu\n",
                 static_cast<unsigned long long>(ck.device_seed));
  }
  const auto split = load_data(a.data);
  const std::size_t n = ck.spec.n_phases();
  const auto device = sample_device(n, seed);
  const auto conv = parse_drive_convention(a.convention);
  DrivePlan plan;
  if (ck.posterior) {
    const std::vector<double> slack(n, a.u);
    plan = plan_drive(*ck.posterior, device, slack, a.bits, conv);
  } else {
    plan = plan_drive(ck.phases->values(), device, a.bits, conv);
  }
  const auto thermal =
      a.ct == 0.0 ? ThermalMatrix::identity(n) : sample_thermal_matrix(n, a.ct, a.ct_seed);
  const auto chip = realize_chip_phases(device, plan, thermal);
  const double acc = evaluate_accuracy(ck.spec, chip.values(), split.test);
  const DrivePlan plans[] = {plan};
  const auto power = power_report(plans);
  json result = {{"manifest", manifest_to_json({seed, a.ct_seed, a.ct, a.bits, a.u})},
                 {"accuracy", acc},
                 {"L_norm_rad", power.l_norm},
                 {"power_mW", power.power_mw},
                 {"n_deactivated", plan.deactivated_count()}};
  std::cout << result.dump(2) << "\n";
  return kOk;
}

struct FeatureArgs {
  std::string mnist_dir;
  std::string cache;
};

int run_features(const FeatureArgs& a) {
  const auto split = load_mnist(a.mnist_dir, default_workers());
  write_feature_cache(a.cache, split.train);
  write_feature_cache(test_cache_path(a.cache), split.test);
  std::printf("wrote %zu train features to %s and %zu test features to %s\n", split.train.size(),
              a.cache.c_str(), split.test.size(), test_cache_path(a.cache).string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Photonic unitary-mesh network simulator and trainer"};
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "Train one network against a sampled device");
  train_cmd->add_option("--scheme", train.scheme, "loglik | reg | bayes")->default_val("loglik");
  train_cmd->add_option("--sigma-p", train.sigma_p, "Prior standard deviation, rad")->default_val(0.1);
  train_cmd->add_option("--config", train.config, "Training config JSON");
  train_cmd->add_option("--device-seed", train.device_seed, "Device offset seed")->default_val(1);
  train_cmd->add_option("--out", train.out, "Checkpoint path")->default_val("checkpoint.json");
  train_cmd->add_option("--log", train.log, "Per-epoch CSV log");
  train_cmd->add_option("--fraction", train.fraction, "Leading fraction of the training set")
      ->default_val(1.0);
  add_data_options(train_cmd, train.data);

  SweepArgs sweep;
  auto* sweep_cmd = app.add_subcommand("sweep", "Run an experiment plan");
  sweep_cmd->add_option("--plan", sweep.plan, "Plan JSON (or a previous report.json)")->required();
  sweep_cmd->add_option("--out", sweep.out, "Output directory")->default_val("sweep");
  add_data_options(sweep_cmd, sweep.data);

  InferArgs infer;
  auto* infer_cmd = app.add_subcommand("infer", "Evaluate a checkpoint on a simulated chip");
  infer_cmd->add_option("--checkpoint", infer.checkpoint, "Checkpoint JSON")->required();
  auto* dev_opt = infer_cmd->add_option("--device-seed", infer.device_seed, "Device offset seed");
  infer_cmd->add_option("--ct", infer.ct, "Thermal crosstalk coefficient")->default_val(0.0);
  infer_cmd->add_option("--bits", infer.bits, "Actuator bits")->default_val(8);
  infer_cmd->add_option("--u", infer.u, "Slack factor for Bayesian drives")->default_val(kDefaultSlack);
  infer_cmd->add_option("--ct-seed", infer.ct_seed, "Thermal matrix seed")->default_val(1);
  infer_cmd->add_option("--convention", infer.convention, "shortest | heater_only")
      ->default_val("shortest");
  add_data_options(infer_cmd, infer.data);

  FeatureArgs features;
  auto* feat_cmd = app.add_subcommand("features", "Extract Fourier features into a cache");
  feat_cmd->add_option("--mnist-dir", features.mnist_dir, "MNIST directory")
      ->default_val(default_mnist_dir());
  feat_cmd->add_option("--cache", features.cache, "Cache file (test set at FILE.test)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*train_cmd) return run_train(train);
    if (*sweep_cmd) return run_sweep(sweep);
    if (*infer_cmd) {
      infer.device_seed_set = dev_opt->count() > 0;
      return run_infer(infer);
    }
    if (*feat_cmd) return run_features(features);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "invalid argument: %s\n", e.what());
    return kConfig;
  } catch (const IoError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const FormatError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const ConsistencyError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const TrainingFailure& e) {
    std::fprintf(stderr, "training failure at epoch %zu: %s\n", e.epoch(), e.what());
    return kTraining;
  } catch (const NumericFailure& e) {
    std::fprintf(stderr, "training failure: %s\n", e.what());
    return kTraining;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kOther;
  }
  return kOther;
}
