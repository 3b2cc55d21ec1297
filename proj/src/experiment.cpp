#include "bayesmesh/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "bayesmesh/data.hpp"
#include "bayesmesh/errors.hpp"
#include "bayesmesh/parallel.hpp"
#include "bayesmesh/rng.hpp"

namespace bayesmesh {

using nlohmann::json;

namespace {

constexpr std::uint64_t kDeviceStream = 0x444556;   // "DEV"
constexpr std::uint64_t kThermalStream = 0x54484d;  // "THM"

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fmt(const char* f, double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double json_number(const json& v) {
  return v.is_null() ? std::numeric_limits<double>::quiet_NaN() : v.get<double>();
}

json training_to_json(const TrainingConfig& c) {
  return {{"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"optimizer", to_string(c.optimizer)},
          {"prior_scale", c.prior_scale},
          {"init_sigma", c.init_sigma},
          {"init", to_string(c.init)}};
}

TrainingConfig training_from_json(const json& doc) {
  TrainingConfig c;
  c.epochs = doc.value("epochs", c.epochs);
  c.batch_size = doc.value("batch_size", c.batch_size);
  if (doc.contains("optimizer")) c.optimizer = parse_optimizer(doc.at("optimizer").get<std::string>());
  c.prior_scale = doc.value("prior_scale", c.prior_scale);
  c.init_sigma = doc.value("init_sigma", c.init_sigma);
  if (doc.contains("init")) c.init = parse_phase_init(doc.at("init").get<std::string>());
  return c;
}

std::uint64_t scheme_stream(Scheme s) {
  switch (s) {
    case Scheme::LogLikelihood: return 1;
    case Scheme::Regularized: return 2;
    case Scheme::Bayesian: return 3;
  }
  return 0;
}

struct TrainJob {
  Scheme scheme;
  double sigma_p;  // +inf for the log-likelihood scheme
  std::size_t device;
  std::string key;
};

std::string model_key(const ExperimentPlan& plan, Scheme scheme, double sigma_p,
                      std::uint64_t device_seed, std::size_t n_train) {
  json k = {{"scheme", to_string(scheme)},
            {"sigma_p", scheme == Scheme::LogLikelihood ? 0.0 : sigma_p},
            {"device_seed", device_seed},
            {"training", config_to_json(plan.trial_config(scheme, device_seed))},
            {"network", spec_to_json(plan.network)},
            {"n_train", n_train}};
  return k.dump();
}

}  // namespace

std::string to_string(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::SigmaSweep: return "sigma_sweep";
    case ExperimentKind::CrosstalkSweep: return "crosstalk_sweep";
    case ExperimentKind::PrecisionSweep: return "precision_sweep";
    case ExperimentKind::BayesAnalysis: return "bayes_analysis";
  }
  return "unknown";
}

ExperimentKind parse_experiment_kind(const std::string& name) {
  if (name == "sigma_sweep") return ExperimentKind::SigmaSweep;
  if (name == "crosstalk_sweep") return ExperimentKind::CrosstalkSweep;
  if (name == "precision_sweep") return ExperimentKind::PrecisionSweep;
  if (name == "bayes_analysis") return ExperimentKind::BayesAnalysis;
  throw ConfigError("unknown experiment kind '" + name + "'");
}

void ExperimentPlan::validate() const {
  if (sigma_p.empty() || crosstalk.empty() || bits.empty() || schemes.empty()) {
    throw ConfigError("plan: every grid axis needs at least one value");
  }
  if (n_devices == 0) throw ConfigError("plan: n_devices must be >= 1");
  if (!device_seeds.empty() && device_seeds.size() != n_devices) {
    throw ConfigError("plan: device_seeds must list n_devices seeds");
  }
  if (n_thermal_trials == 0) throw ConfigError("plan: n_thermal_trials must be >= 1");
  if (!(dataset_fraction > 0.0 && dataset_fraction <= 1.0)) {
    throw ConfigError("plan: dataset_fraction must be in (0, 1]");
  }
  if (!(slack >= 0.0 && slack < 1.0)) throw ConfigError("plan: slack must be in [0, 1)");
  for (double s : sigma_p) {
    if (!(s > 0.0)) throw ConfigError("plan: sigma_p values must be positive");
  }
  for (double c : crosstalk) {
    if (!(c >= 0.0) || !std::isfinite(c)) throw ConfigError("plan: crosstalk must be >= 0");
  }
  for (int b : bits) {
    if (b < 1 || b > kMaxBits) throw ConfigError("plan: bits must be in [1, 24]");
  }
  if (!(map_learning_rate > 0.0) || !(bayes_learning_rate > 0.0)) {
    throw ConfigError("plan: learning rates must be positive");
  }
  if (kind == ExperimentKind::BayesAnalysis &&
      std::find(schemes.begin(), schemes.end(), Scheme::Bayesian) == schemes.end()) {
    throw ConfigError("plan: bayes_analysis needs the bayes scheme");
  }
  network.validate();
  trial_config(Scheme::Bayesian, 0).validate();
}

std::vector<std::uint64_t> ExperimentPlan::resolved_device_seeds() const {
  if (!device_seeds.empty()) return device_seeds;
  std::vector<std::uint64_t> out(n_devices);
  for (std::size_t d = 0; d < n_devices; ++d) out[d] = derive_seed(seed, kDeviceStream, d);
  return out;
}

std::size_t ExperimentPlan::grid_size() const {
  return sigma_p.size() * crosstalk.size() * bits.size() * schemes.size();
}

std::vector<GridPoint> ExperimentPlan::grid() const {
  std::vector<GridPoint> out;
  out.reserve(grid_size());
  for (double s : sigma_p) {
    for (double c : crosstalk) {
      for (int b : bits) {
        for (Scheme sc : schemes) out.push_back({sc, s, c, b});
      }
    }
  }
  return out;
}

TrainingConfig ExperimentPlan::trial_config(Scheme scheme, std::uint64_t device_seed) const {
  TrainingConfig c = training;
  c.scheme = scheme;
  c.seed = derive_seed(device_seed, scheme_stream(scheme));
  c.learning_rate = scheme == Scheme::Bayesian ? bayes_learning_rate : map_learning_rate;
  return c;
}

json plan_to_json(const ExperimentPlan& plan) {
  json schemes = json::array();
  for (Scheme s : plan.schemes) schemes.push_back(to_string(s));
  return {{"kind", to_string(plan.kind)},
          {"sigma_p", plan.sigma_p},
          {"crosstalk", plan.crosstalk},
          {"bits", plan.bits},
          {"schemes", schemes},
          {"n_devices", plan.n_devices},
          {"n_thermal_trials", plan.n_thermal_trials},
          {"seed", plan.seed},
          {"device_seeds", plan.device_seeds},
          {"dataset_fraction", plan.dataset_fraction},
          {"slack", plan.slack},
          {"drive_convention", to_string(plan.convention)},
          {"bayes_drive_rule", to_string(plan.bayes_rule)},
          {"network", spec_to_json(plan.network)},
          {"training", training_to_json(plan.training)},
          {"map_learning_rate", plan.map_learning_rate},
          {"bayes_learning_rate", plan.bayes_learning_rate},
          {"record_runtime", plan.record_runtime}};
}

ExperimentPlan plan_from_json(const json& input) {
  const json& doc = input.contains("plan") ? input.at("plan") : input;
  ExperimentPlan plan;
  try {
    if (!doc.is_object()) throw ConfigError("plan: expected a JSON object");
    plan.kind = parse_experiment_kind(doc.at("kind").get<std::string>());
    plan.sigma_p = doc.value("sigma_p", plan.sigma_p);
    plan.crosstalk = doc.value("crosstalk", plan.crosstalk);
    plan.bits = doc.value("bits", plan.bits);
    if (doc.contains("schemes")) {
      plan.schemes.clear();
      for (const auto& s : doc.at("schemes")) plan.schemes.push_back(parse_scheme(s.get<std::string>()));
    }
    plan.n_devices = doc.value("n_devices", plan.n_devices);
    plan.n_thermal_trials = doc.value("n_thermal_trials", plan.n_thermal_trials);
    plan.seed = doc.value("seed", plan.seed);
    plan.device_seeds = doc.value("device_seeds", plan.device_seeds);
    plan.dataset_fraction = doc.value("dataset_fraction", plan.dataset_fraction);
    plan.slack = doc.value("slack", plan.slack);
    if (doc.contains("drive_convention")) {
      plan.convention = parse_drive_convention(doc.at("drive_convention").get<std::string>());
    }
    if (doc.contains("bayes_drive_rule")) {
      plan.bayes_rule = parse_bayes_drive_rule(doc.at("bayes_drive_rule").get<std::string>());
    }
    if (doc.contains("network")) plan.network = spec_from_json(doc.at("network"));
    if (doc.contains("training")) plan.training = training_from_json(doc.at("training"));
    plan.map_learning_rate = doc.value("map_learning_rate", plan.map_learning_rate);
    plan.bayes_learning_rate = doc.value("bayes_learning_rate", plan.bayes_learning_rate);
    plan.record_runtime = doc.value("record_runtime", plan.record_runtime);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("plan: ") + e.what());
  }
  plan.validate();
  return plan;
}

ExperimentPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open plan " + path.string());
  json doc;
  try {
    in >> doc;
  } catch (const json::exception& e) {
    throw ConfigError("plan " + path.string() + ": " + e.what());
  }
  return plan_from_json(doc);
}

std::string plan_hash(const ExperimentPlan& plan) { return fnv1a_hex(plan_to_json(plan).dump()); }

std::vector<double> sigma_histogram(std::span<const double> sigmas) {
  std::vector<double> hist;
  for (double s : sigmas) {
    const auto bin = static_cast<std::size_t>(std::floor(s / kHistogramBinWidth + 0.5));
    if (bin >= hist.size()) hist.resize(bin + 1, 0.0);
    hist[bin] += 1.0;
  }
  return hist;
}

std::shared_ptr<const ModelStore::Entry> ModelStore::find(const std::string& key) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : it->second;
}

void ModelStore::insert(const std::string& key, std::shared_ptr<const Entry> entry) {
  std::lock_guard lock(mutex_);
  entries_.emplace(key, std::move(entry));
}

std::size_t ModelStore::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

TrialStats reduce_accuracies(std::span<const double> accuracies) {
  TrialStats st;
  if (accuracies.empty()) {
    st.mean = st.std = std::numeric_limits<double>::quiet_NaN();
    return st;
  }
  std::vector<double> v(accuracies.begin(), accuracies.end());
  std::sort(v.begin(), v.end());
  double sum = 0.0;
  for (double a : v) sum += a;
  st.mean = sum / static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double a : v) ss += (a - st.mean) * (a - st.mean);
    st.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return st;
}

ExperimentReport run_experiment(const ExperimentPlan& plan, std::span<const Sample> train,
                                std::span<const Sample> test, const ExperimentOptions& options) {
  plan.validate();
  const auto train_set = take_fraction(train, plan.dataset_fraction);
  const auto test_set = take_fraction(test, plan.dataset_fraction);
  if (train_set.empty() || test_set.empty()) throw InvalidArgument("experiment: empty dataset");
  const std::size_t workers = options.workers == 0 ? default_workers() : options.workers;
  auto progress = [&](const std::string& msg) {
    if (options.progress) options.progress(msg);
  };

  ExperimentReport report;
  report.plan = plan;
  report.device_seeds = plan.resolved_device_seeds();
  report.config_hash = plan_hash(plan);
  report.data_checksums = options.data_checksums;

  const std::size_t n_phi = plan.network.n_phases();
  const std::size_t n_dev = plan.n_devices;
  std::vector<DeviceInstance> devices;
  devices.reserve(n_dev);
  for (auto s : report.device_seeds) devices.push_back(sample_device(n_phi, s));

  // Unique trainings, in first-use order.
  const auto grid = plan.grid();
  std::vector<TrainJob> jobs;
  std::vector<std::vector<std::size_t>> row_job(grid.size(), std::vector<std::size_t>(n_dev));
  std::map<std::string, std::size_t> job_index;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t d = 0; d < n_dev; ++d) {
      const auto& g = grid[r];
      auto key = model_key(plan, g.scheme, g.sigma_p, report.device_seeds[d], train_set.size());
      auto [it, inserted] = job_index.emplace(key, jobs.size());
      if (inserted) {
        const double sp = g.scheme == Scheme::LogLikelihood
                              ? std::numeric_limits<double>::infinity()
                              : g.sigma_p;
        jobs.push_back({g.scheme, sp, d, key});
      }
      row_job[r][d] = it->second;
    }
  }

  ModelStore local;
  ModelStore& store = options.store ? *options.store : local;
  std::vector<std::shared_ptr<const ModelStore::Entry>> models(jobs.size());
  std::vector<double> train_seconds(jobs.size(), 0.0);
  progress("training " + std::to_string(jobs.size()) + " models");
  parallel_for(jobs.size(), workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t j = begin; j < end; ++j) {
      const auto& job = jobs[j];
      if (auto hit = store.find(job.key)) {
        models[j] = hit;
        continue;
      }
      const auto t0 = Clock::now();
      auto entry = std::make_shared<ModelStore::Entry>();
      const GaussianPrior prior{devices[job.device].measured, job.sigma_p};
      const auto config = plan.trial_config(job.scheme, report.device_seeds[job.device]);
      try {
        if (job.scheme == Scheme::Bayesian) {
          entry->posterior = train_bayes(plan.network, train_set, prior, config).posterior;
        } else {
          entry->phases = train_map(plan.network, train_set, prior, config).raw;
        }
      } catch (const std::exception& e) {
        entry->failure = e.what();
      }
      train_seconds[j] = seconds_since(t0);
      store.insert(job.key, entry);
      models[j] = entry;
      progress("trained " + to_string(job.scheme) + " device " + std::to_string(job.device) +
               (entry->failure.empty() ? "" : " (failed: " + entry->failure + ")"));
    }
  });

  // Drive plans per (row, device).
  std::vector<std::vector<std::optional<DrivePlan>>> plans(grid.size(),
                                                          std::vector<std::optional<DrivePlan>>(n_dev));
  const std::vector<double> slack(n_phi, plan.slack);
  for (std::size_t r = 0; r < grid.size(); ++r) {
    for (std::size_t d = 0; d < n_dev; ++d) {
      const auto& m = *models[row_job[r][d]];
      if (!m.failure.empty()) continue;
      if (m.posterior) {
        plans[r][d] = plan_drive(*m.posterior, devices[d], slack, grid[r].bits, plan.convention,
                                 plan.bayes_rule);
      } else {
        plans[r][d] = plan_drive(*m.phases, devices[d], grid[r].bits, plan.convention);
      }
    }
  }

  // Evaluations: (row, device, trial); without crosstalk every trial is the
  // same chip, so one trial stands for all.
  struct EvalJob {
    std::size_t row, device, trial;
  };
  std::vector<EvalJob> evals;
  std::vector<std::size_t> trials_of(grid.size());
  for (std::size_t r = 0; r < grid.size(); ++r) {
    trials_of[r] = grid[r].crosstalk == 0.0 ? 1 : plan.n_thermal_trials;
    for (std::size_t d = 0; d < n_dev; ++d) {
      for (std::size_t t = 0; t < trials_of[r]; ++t) evals.push_back({r, d, t});
    }
  }
  std::vector<double> accuracy(evals.size(), std::numeric_limits<double>::quiet_NaN());
  std::vector<double> eval_seconds(evals.size(), 0.0);
  progress("evaluating " + std::to_string(evals.size()) + " chips");
  parallel_for(evals.size(), workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t e = begin; e < end; ++e) {
      const auto& ev = evals[e];
      const auto& dp = plans[ev.row][ev.device];
      if (!dp) continue;
      const auto t0 = Clock::now();
      try {
        const double ct = grid[ev.row].crosstalk;
        const auto thermal =
            ct == 0.0 ? ThermalMatrix::identity(n_phi)
                      : sample_thermal_matrix(
                            n_phi, ct,
                            derive_seed(report.device_seeds[ev.device], kThermalStream, ev.trial));
        const auto chip = realize_chip_phases(devices[ev.device], *dp, thermal);
        accuracy[e] = evaluate_accuracy(plan.network, chip.values(), test_set, 1);
      } catch (const std::exception&) {
        accuracy[e] = std::numeric_limits<double>::quiet_NaN();
      }
      eval_seconds[e] = seconds_since(t0);
    }
  });

  // Sequential reduction in (row, device, trial) order.
  report.rows.resize(grid.size());
  std::size_t e = 0;
  for (std::size_t r = 0; r < grid.size(); ++r) {
    ReportRow& row = report.rows[r];
    row.point = grid[r];
    std::vector<double> acc;
    std::vector<double> l1, deact;
    std::vector<double> hist_sum;
    std::size_t n_hist = 0;
    std::set<std::size_t> counted_jobs;
    for (std::size_t d = 0; d < n_dev; ++d) {
      const std::size_t j = row_job[r][d];
      if (counted_jobs.insert(j).second) row.runtime_s += train_seconds[j];
      if (plans[r][d]) {
        l1.push_back(plans[r][d]->l1_norm());
        deact.push_back(static_cast<double>(plans[r][d]->deactivated_count()));
      }
      for (std::size_t t = 0; t < trials_of[r]; ++t, ++e) {
        row.runtime_s += eval_seconds[e];
        if (std::isnan(accuracy[e])) {
          ++row.n_failures;
        } else {
          acc.push_back(accuracy[e]);
        }
      }
      if (plan.kind == ExperimentKind::BayesAnalysis && models[j]->posterior) {
        const auto h = sigma_histogram(models[j]->posterior->sigmas());
        if (h.size() > hist_sum.size()) hist_sum.resize(h.size(), 0.0);
        for (std::size_t b = 0; b < h.size(); ++b) hist_sum[b] += h[b];
        ++n_hist;
      }
    }
    row.n_evaluations = acc.size();
    const auto st = reduce_accuracies(acc);
    row.mean_accuracy = st.mean;
    row.accuracy_std = st.std;
    const auto nan = std::numeric_limits<double>::quiet_NaN();
    row.l_norm = l1.empty() ? nan : reduce_accuracies(l1).mean;
    row.power_mw = row.l_norm * kMilliwattPerRadian;
    row.n_deactivated_mean = deact.empty() ? nan : reduce_accuracies(deact).mean;
    if (n_hist > 0) {
      for (double& v : hist_sum) v /= static_cast<double>(n_hist);
      row.sigma_histogram = std::move(hist_sum);
    }
  }

  if (plan.kind == ExperimentKind::BayesAnalysis) {
    for (double s : plan.sigma_p) {
      for (std::size_t d = 0; d < n_dev; ++d) {
        auto key = model_key(plan, Scheme::Bayesian, s, report.device_seeds[d], train_set.size());
        const auto& m = *models[job_index.at(key)];
        if (m.posterior) report.posteriors.push_back({s, report.device_seeds[d], m.posterior->sigmas()});
      }
    }
  }
  return report;
}

std::string report_to_csv(const ExperimentReport& report) {
  std::ostringstream os;
  os << "scheme,sigma_p,crosstalk,bits,mean_accuracy,accuracy_std,L_norm_rad,power_mW,"
        "n_deactivated_mean,runtime_s\n";
  for (const auto& row : report.rows) {
    os << to_string(row.point.scheme) << ',' << fmt("%.6g", row.point.sigma_p) << ','
       << fmt("%.6g", row.point.crosstalk) << ',' << row.point.bits << ','
       << fmt("%.6f", row.mean_accuracy) << ',' << fmt("%.6f", row.accuracy_std) << ','
       << fmt("%.4f", row.l_norm) << ',' << fmt("%.4f", row.power_mw) << ','
       << fmt("%.2f", row.n_deactivated_mean) << ','
       << (report.plan.record_runtime ? fmt("%.3f", row.runtime_s) : std::string("NA")) << '\n';
  }
  return os.str();
}

json report_to_json(const ExperimentReport& report) {
  json rows = json::array();
  for (const auto& row : report.rows) {
    rows.push_back({{"scheme", to_string(row.point.scheme)},
                    {"sigma_p", row.point.sigma_p},
                    {"crosstalk", row.point.crosstalk},
                    {"bits", row.point.bits},
                    {"mean_accuracy", row.mean_accuracy},
                    {"accuracy_std", row.accuracy_std},
                    {"L_norm_rad", row.l_norm},
                    {"power_mW", row.power_mw},
                    {"n_deactivated_mean", row.n_deactivated_mean},
                    {"runtime_s", row.runtime_s},
                    {"n_evaluations", row.n_evaluations},
                    {"n_failures", row.n_failures},
                    {"sigma_histogram", row.sigma_histogram}});
  }
  json posteriors = json::array();
  for (const auto& p : report.posteriors) {
    posteriors.push_back({{"sigma_p", p.sigma_p}, {"device_seed", p.device_seed}, {"sigmas", p.sigmas}});
  }
  // Replay record of every chip evaluated.
  json trials = json::array();
  for (const auto& row : report.rows) {
    const std::size_t n_trials = row.point.crosstalk == 0.0 ? 1 : report.plan.n_thermal_trials;
    for (auto ds : report.device_seeds) {
      for (std::size_t t = 0; t < n_trials; ++t) {
        TrialManifest m{ds, row.point.crosstalk == 0.0 ? 0 : derive_seed(ds, kThermalStream, t),
                        row.point.crosstalk, row.point.bits, report.plan.slack};
        json mj = manifest_to_json(m);
        mj["scheme"] = to_string(row.point.scheme);
        mj["sigma_p"] = row.point.sigma_p;
        trials.push_back(std::move(mj));
      }
    }
  }
  return {{"plan", plan_to_json(report.plan)},
          {"device_seeds", report.device_seeds},
          {"config_hash", report.config_hash},
          {"data_checksums", report.data_checksums},
          {"rows", rows},
          {"posteriors", posteriors},
          {"trials", trials}};
}

ExperimentReport report_from_json(const json& doc) {
  ExperimentReport report;
  try {
    report.plan = plan_from_json(doc.at("plan"));
    report.device_seeds = doc.at("device_seeds").get<std::vector<std::uint64_t>>();
    report.config_hash = doc.at("config_hash").get<std::string>();
    report.data_checksums = doc.value("data_checksums", std::vector<std::string>{});
    for (const auto& r : doc.at("rows")) {
      ReportRow row;
      row.point = {parse_scheme(r.at("scheme").get<std::string>()), r.at("sigma_p").get<double>(),
                   r.at("crosstalk").get<double>(), r.at("bits").get<int>()};
      row.mean_accuracy = json_number(r.at("mean_accuracy"));
      row.accuracy_std = json_number(r.at("accuracy_std"));
      row.l_norm = json_number(r.at("L_norm_rad"));
      row.power_mw = json_number(r.at("power_mW"));
      row.n_deactivated_mean = json_number(r.at("n_deactivated_mean"));
      row.runtime_s = json_number(r.at("runtime_s"));
      row.n_evaluations = r.at("n_evaluations").get<std::size_t>();
      row.n_failures = r.at("n_failures").get<std::size_t>();
      row.sigma_histogram = r.value("sigma_histogram", std::vector<double>{});
      report.rows.push_back(std::move(row));
    }
    for (const auto& p : doc.value("posteriors", json::array())) {
      report.posteriors.push_back({p.at("sigma_p").get<double>(), p.at("device_seed").get<std::uint64_t>(),
                                   p.at("sigmas").get<std::vector<double>>()});
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("report: ") + e.what());
  }
  return report;
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void emit_report(const ExperimentReport& report, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / "report.csv", report_to_csv(report));
  write_file(dir / "report.json", report_to_json(report).dump(2) + "\n");
  if (report.plan.kind != ExperimentKind::BayesAnalysis) return;
  std::ostringstream os;
  os << "scheme,sigma_p,crosstalk,bits,bin_center_rad,mean_count\n";
  for (const auto& row : report.rows) {
    for (std::size_t b = 0; b < row.sigma_histogram.size(); ++b) {
      os << to_string(row.point.scheme) << ',' << fmt("%.6g", row.point.sigma_p) << ','
         << fmt("%.6g", row.point.crosstalk) << ',' << row.point.bits << ','
         << fmt("%.2f", static_cast<double>(b) * kHistogramBinWidth) << ','
         << fmt("%.2f", row.sigma_histogram[b]) << '\n';
    }
  }
  write_file(dir / "histogram.csv", os.str());
}

}  // namespace bayesmesh
