#pragma once

// Declarative sweeps over (scheme, sigma_p, crosstalk, bits): per device,
// train against the measured offsets, plan drives, realize the chip under
// thermal trials and evaluate test accuracy.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "bayesmesh/hardware.hpp"
#include "bayesmesh/network.hpp"
#include "bayesmesh/sample.hpp"
#include "bayesmesh/training.hpp"

namespace bayesmesh {

enum class ExperimentKind { SigmaSweep, CrosstalkSweep, PrecisionSweep, BayesAnalysis };

std::string to_string(ExperimentKind k);
ExperimentKind parse_experiment_kind(const std::string& name);

inline constexpr double kHistogramBinWidth = 0.01;

struct GridPoint {
  Scheme scheme = Scheme::LogLikelihood;
  double sigma_p = 0.0;
  double crosstalk = 0.0;
  int bits = 8;

  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

/// The grid is the product sigma_p x crosstalk x bits x schemes. The axis
/// named by `kind` must be given explicitly; the others default to one
/// value each.
struct ExperimentPlan {
  ExperimentKind kind = ExperimentKind::SigmaSweep;
  std::vector<double> sigma_p{0.1};
  std::vector<double> crosstalk{0.0};
  std::vector<int> bits{8};
  std::vector<Scheme> schemes{Scheme::LogLikelihood, Scheme::Regularized};
  std::size_t n_devices = 5;
  std::size_t n_thermal_trials = 10;
  std::uint64_t seed = 1;
  /// Explicit device seeds; when empty they are derived from `seed`.
  std::vector<std::uint64_t> device_seeds;
  /// Leading fraction of the train and test sets.
  double dataset_fraction = 1.0;
  double slack = kDefaultSlack;
  DriveConvention convention = DriveConvention::Shortest;
  BayesDriveRule bayes_rule = BayesDriveRule::IntervalEdge;
  NetworkSpec network;
  /// Shared training settings; scheme, seed and learning rate are set per
  /// trial.
  TrainingConfig training;
  double map_learning_rate = kDefaultMapLearningRate;
  double bayes_learning_rate = kDefaultBayesLearningRate;
  /// Write measured runtimes into the CSV. Off by default so that re-runs
  /// are byte-identical.
  bool record_runtime = false;

  /// Throws ConfigError: empty grid axis, n_devices == 0, bad fraction,
  /// non-positive sigma, negative crosstalk, bits outside [1, 24], or a
  /// BayesAnalysis plan without the Bayesian scheme.
  void validate() const;
  [[nodiscard]] std::vector<std::uint64_t> resolved_device_seeds() const;
  [[nodiscard]] std::size_t grid_size() const;
  /// Grid points in row order: sigma_p, then crosstalk, then bits, then
  /// scheme varies fastest.
  [[nodiscard]] std::vector<GridPoint> grid() const;
  /// Training settings for one (scheme, device) trial.
  [[nodiscard]] TrainingConfig trial_config(Scheme scheme, std::uint64_t device_seed) const;
};

nlohmann::json plan_to_json(const ExperimentPlan& plan);
/// Accepts a bare plan or a report document carrying one under "plan".
ExperimentPlan plan_from_json(const nlohmann::json& doc);
ExperimentPlan load_plan(const std::filesystem::path& path);

struct ReportRow {
  GridPoint point;
  double mean_accuracy = 0.0;
  double accuracy_std = 0.0;
  double l_norm = 0.0;
  double power_mw = 0.0;
  double n_deactivated_mean = 0.0;
  double runtime_s = 0.0;
  std::size_t n_evaluations = 0;
  std::size_t n_failures = 0;
  /// Mean count per bin of sigma* over devices (Bayesian rows of a
  /// BayesAnalysis plan); bin k is centred on k * 0.01 rad.
  std::vector<double> sigma_histogram;

  friend bool operator==(const ReportRow&, const ReportRow&) = default;
};

/// sigma* of one trained posterior, kept for BayesAnalysis plans.
struct PosteriorSummary {
  double sigma_p = 0.0;
  std::uint64_t device_seed = 0;
  std::vector<double> sigmas;

  friend bool operator==(const PosteriorSummary&, const PosteriorSummary&) = default;
};

struct ExperimentReport {
  ExperimentPlan plan;
  std::vector<std::uint64_t> device_seeds;
  std::string config_hash;
  std::vector<std::string> data_checksums;
  std::vector<ReportRow> rows;
  std::vector<PosteriorSummary> posteriors;
};

/// Histogram of `sigmas` with centred bins of width 0.01 rad.
std::vector<double> sigma_histogram(std::span<const double> sigmas);

/// Trained models keyed by (scheme, sigma_p, device seed, training config).
/// Log-likelihood models ignore sigma_p. Safe to share across threads and
/// across run_experiment calls with the same dataset.
class ModelStore {
 public:
  struct Entry {
    std::optional<std::vector<double>> phases;  // MAP schemes, unwrapped
    std::optional<VariationalPosterior> posterior;
    std::string failure;  // non-empty if training failed
  };

  std::shared_ptr<const Entry> find(const std::string& key) const;
  void insert(const std::string& key, std::shared_ptr<const Entry> entry);
  [[nodiscard]] std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::shared_ptr<const Entry>> entries_;
};

struct ExperimentOptions {
  std::size_t workers = 0;  // 0: default_workers()
  ModelStore* store = nullptr;
  std::function<void(const std::string&)> progress;
  std::vector<std::string> data_checksums;
};

/// Runs every grid point; trial failures are counted per row and the run
/// continues. Results do not depend on the worker count.
ExperimentReport run_experiment(const ExperimentPlan& plan, std::span<const Sample> train,
                                std::span<const Sample> test,
                                const ExperimentOptions& options = {});

/// Row statistics from per-trial accuracies, reduced in the given order.
struct TrialStats {
  double mean = 0.0;
  double std = 0.0;
};
TrialStats reduce_accuracies(std::span<const double> accuracies);

/// CSV header: scheme,sigma_p,crosstalk,bits,mean_accuracy,accuracy_std,
/// L_norm_rad,power_mW,n_deactivated_mean,runtime_s
std::string report_to_csv(const ExperimentReport& report);
nlohmann::json report_to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::json& doc);

/// Writes report.csv and report.json (plus histogram.csv for BayesAnalysis)
/// under `dir`. Throws IoError if a file cannot be written.
void emit_report(const ExperimentReport& report, const std::filesystem::path& dir);

/// FNV-1a 64 of the canonical plan JSON, hex.
std::string plan_hash(const ExperimentPlan& plan);

}  // namespace bayesmesh
