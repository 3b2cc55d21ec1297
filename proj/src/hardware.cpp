#include "bayesmesh/hardware.hpp"

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "bayesmesh/errors.hpp"
#include "bayesmesh/rng.hpp"
#include "bayesmesh/training.hpp"

namespace bayesmesh {

namespace {
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}

DeviceInstance sample_device(std::size_t n_phases, std::uint64_t seed) {
  if (n_phases == 0) throw InvalidArgument("sample_device: need at least one phase");
  DeviceInstance d;
  d.seed = seed;
  d.offset.resize(n_phases);
  Rng rng(derive_seed(seed, 0x4f46465345ULL));
  for (double& v : d.offset) v = wrap_phase(kTwoPi * rng.uniform());
  d.measured = d.offset;
  return d;
}

double quantize(double radians, int bits) {
  if (bits < 1 || bits > kMaxBits) {
    throw InvalidArgument("quantize: bits must be in [1, 24], got " + std::to_string(bits));
  }
  const double levels = std::ldexp(1.0, bits);
  const double step = kTwoPi / levels;
  double k = std::nearbyint(wrap_phase(radians) / step);
  if (k >= levels) k = 0.0;
  return k * step;
}

ThermalMatrix ThermalMatrix::identity(std::size_t n) {
  ThermalMatrix t;
  t.n_ = n;
  t.t_.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) t.t_[i * n + i] = 1.0;
  return t;
}

std::vector<double> ThermalMatrix::apply(std::span<const double> drive) const {
  if (drive.size() != n_) throw ShapeError("ThermalMatrix::apply: size mismatch");
  std::vector<double> out(n_);
  if (ct_ == 0.0) {
    out.assign(drive.begin(), drive.end());
    return out;
  }
  for (std::size_t i = 0; i < n_; ++i) {
    const double* row = t_.data() + i * n_;
    double s = 0.0;
    for (std::size_t j = 0; j < n_; ++j) s += row[j] * drive[j];
    out[i] = s;
  }
  return out;
}

ThermalMatrix sample_thermal_matrix(std::size_t n_phases, double ct, std::uint64_t seed) {
  if (!(ct >= 0.0) || !std::isfinite(ct)) {
    throw InvalidArgument("sample_thermal_matrix: crosstalk coefficient must be >= 0");
  }
  ThermalMatrix t = ThermalMatrix::identity(n_phases);
  t.ct_ = ct;
  if (ct == 0.0) return t;
  Rng rng(derive_seed(seed, 0x54484552ULL));
  for (std::size_t i = 0; i < n_phases; ++i) {
    for (std::size_t j = 0; j < n_phases; ++j) {
      if (i != j) t.t_[i * n_phases + j] = ct * rng.uniform();
    }
  }
  return t;
}

std::size_t DrivePlan::deactivated_count() const {
  std::size_t n = 0;
  for (auto d : deactivated) n += d ? 1 : 0;
  return n;
}

double DrivePlan::l1_norm() const {
  double s = 0.0;
  for (double v : dphi) s += std::abs(v);
  return s;
}

std::string to_string(DriveConvention c) {
  return c == DriveConvention::Shortest ? "shortest" : "heater_only";
}

std::string to_string(BayesDriveRule r) {
  return r == BayesDriveRule::IntervalEdge ? "interval_edge" : "literal";
}

DriveConvention parse_drive_convention(const std::string& name) {
  if (name == "shortest") return DriveConvention::Shortest;
  if (name == "heater_only") return DriveConvention::HeaterOnly;
  throw ConfigError("unknown drive convention '" + name + "'");
}

BayesDriveRule parse_bayes_drive_rule(const std::string& name) {
  if (name == "interval_edge") return BayesDriveRule::IntervalEdge;
  if (name == "literal") return BayesDriveRule::Literal;
  throw ConfigError("unknown Bayesian drive rule '" + name + "'");
}

double quantize_drive(double displacement, int bits, DriveConvention convention) {
  double q = quantize(displacement, bits);
  if (convention == DriveConvention::Shortest && q >= std::numbers::pi) q -= kTwoPi;
  return q;
}

DrivePlan plan_drive(std::span<const double> phases, const DeviceInstance& device, int bits,
                     DriveConvention convention) {
  if (phases.size() != device.size()) throw ShapeError("plan_drive: size mismatch");
  DrivePlan plan;
  plan.bits = bits;
  plan.convention = convention;
  plan.dphi.resize(phases.size());
  plan.deactivated.resize(phases.size());
  for (std::size_t i = 0; i < phases.size(); ++i) {
    plan.dphi[i] = quantize_drive(phases[i] - device.measured[i], bits, convention);
    plan.deactivated[i] = plan.dphi[i] == 0.0;
  }
  return plan;
}

DrivePlan plan_drive(const VariationalPosterior& posterior, const DeviceInstance& device,
                     std::span<const double> slack, int bits, DriveConvention convention,
                     BayesDriveRule rule) {
  const std::size_t n = posterior.size();
  if (n != device.size() || slack.size() != n) throw ShapeError("plan_drive: size mismatch");
  DrivePlan plan;
  plan.bits = bits;
  plan.convention = convention;
  plan.slack.assign(slack.begin(), slack.end());
  plan.dphi.assign(n, 0.0);
  plan.deactivated.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = slack[i];
    if (!(u >= 0.0 && u < 1.0)) throw InvalidArgument("plan_drive: slack must be in [0, 1)");
    const double sigma = posterior.sigma(i);
    const double mu = posterior.mu[i];
    // Displacement from the passive offset to the posterior mean.
    const double to_mean = signed_wrap(mu - device.measured[i]);
    if (std::abs(to_mean) <= sigma) {
      plan.deactivated[i] = 1;
      continue;
    }
    double target;
    if (rule == BayesDriveRule::IntervalEdge) {
      target = to_mean - u * sigma * (to_mean > 0.0 ? 1.0 : -1.0);
    } else {
      target = mu - u * sigma;
    }
    plan.dphi[i] = quantize_drive(target, bits, convention);
    plan.deactivated[i] = plan.dphi[i] == 0.0;
  }
  return plan;
}

PhaseVector realize_chip_phases(const DeviceInstance& device, const DrivePlan& plan,
                                const ThermalMatrix& thermal) {
  const std::size_t n = device.size();
  if (plan.size() != n || plan.deactivated.size() != n || thermal.size() != n) {
    throw ShapeError("realize_chip_phases: dimension mismatch");
  }
  std::vector<double> drive(n);
  for (std::size_t i = 0; i < n; ++i) drive[i] = plan.deactivated[i] ? 0.0 : plan.dphi[i];
  const auto shifted = thermal.apply(drive);
  std::vector<double> chip(n);
  for (std::size_t i = 0; i < n; ++i) chip[i] = device.offset[i] + shifted[i];
  return PhaseVector(std::move(chip));
}

PowerReport power_report(std::span<const DrivePlan> plans) {
  if (plans.empty()) throw InvalidArgument("power_report: need at least one plan");
  double total = 0.0;
  for (const auto& p : plans) total += p.l1_norm();
  PowerReport r;
  r.n_devices = plans.size();
  r.l_norm = total / static_cast<double>(plans.size());
  r.power_mw = r.l_norm * kMilliwattPerRadian;
  return r;
}

nlohmann::json manifest_to_json(const TrialManifest& m) {
  return {{"device_seed", m.device_seed}, {"ct_seed", m.ct_seed}, {"CT", m.ct},
          {"bits", m.bits}, {"u", m.u}};
}

TrialManifest manifest_from_json(const nlohmann::json& doc) {
  try {
    TrialManifest m;
    m.device_seed = doc.at("device_seed").get<std::uint64_t>();
    m.ct_seed = doc.at("ct_seed").get<std::uint64_t>();
    m.ct = doc.at("CT").get<double>();
    m.bits = doc.at("bits").get<int>();
    m.u = doc.at("u").get<double>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed trial manifest: ") + e.what());
  }
}

}  // namespace bayesmesh
